//! Joint update of the network weights and the canonical table: AdamW with
//! warm-up plus cosine decay, global-norm clipping and seeded shuffling.
//!
//! The scoring head is a separate parameter group. It is fitted to the
//! targets through a detached copy of the embeddings, so it never feeds
//! gradient into the encoder; the main update only sees
//! `L_kpt + lambda * L_cf`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Gradients, Graph, GraphError, NodeId};
use crate::model::{
    confounder_scores, counterfactual_replace, encode, reason_and_predict, select_intervention,
    simcc_head, CoordNodes, InterventionMask, Model, ModelConfig, ModelError, Params, Strategy,
    Topology,
};
use crate::objective::{
    consistency_loss, encode_targets, keypoint_loss, total_loss, ObjectiveError,
};
use crate::skeleton::SkeletonSpec;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset rows have {actual} keypoints, model expects {expected}")]
    DatasetShape { expected: usize, actual: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// The cosine schedule decays to `lr * lr_floor`.
    pub lr_floor: f64,
    pub weight_decay: f64,
    pub warmup_iters: usize,
    pub grad_clip_norm: f64,
    pub lambda: f64,
    pub strategy: Strategy,
    pub seed: u64,
    pub hidden: usize,
    pub d_emb: usize,
    pub bins: usize,
    /// Width of the Gaussian training targets, in bins.
    pub sigma_bins: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            lr_floor: 0.05,
            weight_decay: 0.05,
            warmup_iters: 100,
            grad_clip_norm: 35.0,
            lambda: 0.1,
            strategy: Strategy::TopN(1),
            seed: 0,
            hidden: 64,
            d_emb: 32,
            bins: 32,
            sigma_bins: 1.5,
        }
    }
}

fn bad(field: &'static str, reason: &str) -> TrainError {
    TrainError::Config {
        field,
        reason: reason.into(),
    }
}

impl TrainConfig {
    pub fn validate(&self, k: usize) -> Result<(), TrainError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if self.epochs == 0 {
            return Err(bad("epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(bad("batch_size", "must be at least 1"));
        }
        if !positive(self.lr) {
            return Err(bad("lr", "must be positive"));
        }
        if !(0.0..=1.0).contains(&self.lr_floor) {
            return Err(bad("lr_floor", "must lie in [0, 1]"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(bad("weight_decay", "must be non-negative"));
        }
        if !positive(self.grad_clip_norm) {
            return Err(bad("grad_clip_norm", "must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(bad("lambda", "must be non-negative"));
        }
        match self.strategy {
            Strategy::TopN(n) if n > k => {
                return Err(bad("intervention_n", "exceeds the number of keypoints"))
            }
            Strategy::Threshold(t) if !(0.0..1.0).contains(&t) => {
                return Err(bad("threshold", "must lie in [0, 1)"))
            }
            _ => {}
        }
        if self.hidden == 0 || self.d_emb == 0 {
            return Err(bad("d_emb", "widths must be at least 1"));
        }
        if self.bins < 2 {
            return Err(bad("bins", "must be at least 2"));
        }
        if !positive(self.sigma_bins) {
            return Err(bad("sigma_bins", "must be positive"));
        }
        Ok(())
    }

    pub fn model_config(&self, k: usize, d_in: usize) -> ModelConfig {
        ModelConfig {
            k,
            d_in,
            hidden: self.hidden,
            d_emb: self.d_emb,
            bins_x: self.bins,
            bins_y: self.bins,
            strategy: self.strategy,
        }
    }

    /// Learning rate at a zero-based iteration: linear ramp
    /// `lr * (iter + 1) / warmup`, then cosine decay to the floor at
    /// `total_iters`.
    pub fn lr_at(&self, iter: u64, total_iters: u64) -> f64 {
        let warm = self.warmup_iters as u64;
        if iter < warm {
            return self.lr * (iter + 1) as f64 / warm as f64;
        }
        let floor = self.lr * self.lr_floor;
        let span = total_iters.saturating_sub(warm).max(1);
        let t = ((iter - warm) as f64 / span as f64).min(1.0);
        floor + 0.5 * (self.lr - floor) * (1.0 + libm::cos(core::f64::consts::PI * t))
    }
}

/// First and second moments for one parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Params<Tensor>,
    pub v: Params<Tensor>,
}

impl AdamState {
    pub fn new(params: &Params<Tensor>) -> Self {
        let zeros = params.map(|_, t| Tensor::zeros(t.shape()));
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Scales `grads` in place so their joint norm is at most `max_norm`.
/// Returns the norm before clipping and whether it was applied.
pub fn clip_global_norm(grads: &mut [&mut Tensor], max_norm: f64) -> (f64, bool) {
    let norm = libm::sqrt(grads.iter().map(|g| g.norm_sq()).sum::<f64>());
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
        (norm, true)
    } else {
        (norm, false)
    }
}

/// One AdamW update over the parameters selected by `in_group`: decoupled
/// decay `p -= lr * wd * p`, then the bias-corrected moment step.
pub fn adamw_step(
    params: &mut Params<Tensor>,
    grads: &Params<Tensor>,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    in_group: impl Fn(&str) -> bool,
) {
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(ADAM_BETA1, t);
    let c2 = 1.0 - libm::pow(ADAM_BETA2, t);
    let items = Params::<Tensor>::NAMES
        .iter()
        .zip(params.iter_mut())
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()));
    for (((name, p), g), (m, v)) in items {
        if !in_group(name) {
            continue;
        }
        let pd = p.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = ADAM_BETA1 * md[i] + (1.0 - ADAM_BETA1) * gi;
            vd[i] = ADAM_BETA2 * vd[i] + (1.0 - ADAM_BETA2) * gi * gi;
            pd[i] -= lr * weight_decay * pd[i];
            let mh = md[i] / c1;
            let vh = vd[i] / c2;
            pd[i] -= lr * mh / (libm::sqrt(vh) + ADAM_EPS);
        }
    }
}

/// Rows of a training set, embeddings layout `[N, d_in]` for features and
/// `N*K` entries for coordinates and visibility.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub k: usize,
    pub features: Tensor,
    pub coords: Vec<[f64; 2]>,
    pub visibility: Vec<bool>,
}

/// A gathered minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: Tensor,
    pub coords: Vec<[f64; 2]>,
    pub visibility: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, indices: &[usize]) -> Batch {
        let d = self.features.cols();
        let mut feats = Vec::with_capacity(indices.len() * d);
        let mut coords = Vec::with_capacity(indices.len() * self.k);
        let mut vis = Vec::with_capacity(indices.len() * self.k);
        for &i in indices {
            feats.extend_from_slice(self.features.row(i));
            coords.extend_from_slice(&self.coords[i * self.k..(i + 1) * self.k]);
            vis.extend_from_slice(&self.visibility[i * self.k..(i + 1) * self.k]);
        }
        Batch {
            features: Tensor::new(vec![indices.len(), d], feats).expect("batch"),
            coords,
            visibility: vis,
        }
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub iter: u64,
    pub epoch: u64,
    pub l_kpt: f64,
    pub l_cf: f64,
    pub l_total: f64,
    /// Auxiliary loss of the scoring head.
    pub l_score: f64,
    pub lr: f64,
    pub grad_norm: f64,
    pub clipped: bool,
    /// Times each keypoint type was replaced in this batch.
    pub interventions: Vec<u32>,
}

/// Nodes of one recorded training step.
#[derive(Debug, Clone)]
pub struct StepNodes {
    pub params: Params<NodeId>,
    pub f: NodeId,
    pub f_prime: NodeId,
    pub score: CoordNodes,
    pub mask: InterventionMask,
    pub cf: CoordNodes,
    /// Absent in the supervised baseline.
    pub obs: Option<CoordNodes>,
    pub l_kpt: NodeId,
    pub l_cf: Option<NodeId>,
    pub l_total: NodeId,
    pub l_score: NodeId,
    /// `l_total + l_score`; the two terms touch disjoint parameter groups.
    pub objective: NodeId,
}

/// A step recorded on its own graph.
#[derive(Debug, Clone)]
pub struct StepGraph {
    pub graph: Graph,
    pub nodes: StepNodes,
}

/// Values that enter a step only through stop-gradient. Substituting them
/// as constants leaves every gradient unchanged and makes the step a plain
/// function of the parameters, which finite differences can probe.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenTargets {
    pub embeddings: Tensor,
    pub obs: Option<(Tensor, Tensor)>,
}

impl StepNodes {
    pub fn frozen_targets(&self, g: &Graph) -> FrozenTargets {
        FrozenTargets {
            embeddings: g.value(self.f).clone(),
            obs: self
                .obs
                .map(|o| (g.value(o.px).clone(), g.value(o.py).clone())),
        }
    }
}

/// Which objective a step optimises.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepKind {
    /// Replacement, observational path and `L_kpt + lambda * L_cf`.
    Intervention { lambda: f64 },
    /// Plain `L_kpt` on the unmodified embeddings.
    Supervised,
}

/// Records one step on `g` with `p` as the parameter nodes: encode, score,
/// select, replace, reason and predict on the counterfactual path, the
/// observational path under stop-gradient, and every loss.
pub fn record_step(
    g: &mut Graph,
    p: Params<NodeId>,
    config: &ModelConfig,
    topo: &Topology,
    batch: &Batch,
    kind: StepKind,
    sigma_bins: f64,
    frozen: Option<&FrozenTargets>,
) -> Result<StepNodes, TrainError> {
    let c = config;
    let b = batch.len();
    let gt = encode_targets(&batch.coords, &batch.visibility, sigma_bins, c.bins_x, c.bins_y)?;
    let x = g.constant(batch.features.clone());
    let f = encode(g, x, &p, c.k, c.d_emb)?;
    let detached = match frozen {
        Some(fz) => g.constant(fz.embeddings.clone()),
        None => g.stop_gradient(f)?,
    };
    let score = simcc_head(g, detached, p.score_wx, p.score_bx, p.score_wy, p.score_by)?;
    let l_score = keypoint_loss(g, &gt, score, b)?;

    let lambda = match kind {
        StepKind::Supervised => {
            let cf = reason_and_predict(g, f, topo, &p)?;
            let l_kpt = keypoint_loss(g, &gt, cf, b)?;
            let objective = g.add(l_kpt, l_score)?;
            return Ok(StepNodes {
                params: p,
                f,
                f_prime: f,
                score,
                mask: InterventionMask::empty(b, c.k),
                cf,
                obs: None,
                l_kpt,
                l_cf: None,
                l_total: l_kpt,
                l_score,
                objective,
            });
        }
        StepKind::Intervention { lambda } => lambda,
    };

    let scores = confounder_scores(&score.values(g));
    let mask = select_intervention(&scores, b, c.k, c.strategy)?;
    let f_prime = counterfactual_replace(g, f, &mask, p.canonical, topo)?;
    let cf = reason_and_predict(g, f_prime, topo, &p)?;
    let obs = match frozen.and_then(|fz| fz.obs.as_ref()) {
        Some((px, py)) => CoordNodes {
            px: g.constant(px.clone()),
            py: g.constant(py.clone()),
        },
        None => reason_and_predict(g, f, topo, &p)?,
    };
    let l_kpt = keypoint_loss(g, &gt, cf, b)?;
    let l_cf = consistency_loss(g, obs, cf, &mask)?;
    let l_total = total_loss(g, l_kpt, l_cf, lambda)?;
    let objective = g.add(l_total, l_score)?;
    Ok(StepNodes {
        params: p,
        f,
        f_prime,
        score,
        mask,
        cf,
        obs: Some(obs),
        l_kpt,
        l_cf: Some(l_cf),
        l_total,
        l_score,
        objective,
    })
}

/// Records a step on a fresh graph with the model weights as leaves.
pub fn build_step_graph(
    model: &Model,
    batch: &Batch,
    topo: &Topology,
    kind: StepKind,
    sigma_bins: f64,
) -> Result<StepGraph, TrainError> {
    let mut graph = Graph::new();
    let p = model.params.bind(&mut graph);
    let nodes = record_step(&mut graph, p, &model.config, topo, batch, kind, sigma_bins, None)?;
    Ok(StepGraph { graph, nodes })
}

/// Gradient of every parameter, checked for finiteness.
pub fn param_grads(
    grads: &Gradients,
    nodes: &Params<NodeId>,
) -> Result<Params<Tensor>, TrainError> {
    nodes.try_map(|name, id| {
        let g = grads.get(*id).cloned().expect("parameter gradient");
        if g.is_finite() {
            Ok(g)
        } else {
            Err(TrainError::NonFiniteGradient(name))
        }
    })
}

/// Owns a model and its optimiser state across steps and epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    pub main: AdamState,
    pub probe: AdamState,
    /// Iterations completed.
    pub iter: u64,
    /// Epochs completed.
    pub epoch: u64,
    /// Length of the schedule, fixed by the dataset size.
    pub total_iters: u64,
    topo_cache: Vec<Topology>,
}

impl Trainer {
    pub fn new(
        config: TrainConfig,
        skeleton: SkeletonSpec,
        d_in: usize,
        n_train: usize,
    ) -> Result<Self, TrainError> {
        config.validate(skeleton.k())?;
        let mc = config.model_config(skeleton.k(), d_in);
        let model = Model::new(mc, skeleton, config.seed)?;
        Ok(Self::from_parts(config, model, n_train))
    }

    /// Fresh optimiser state around existing weights.
    pub fn from_parts(config: TrainConfig, model: Model, n_train: usize) -> Self {
        let main = AdamState::new(&model.params);
        let probe = main.clone();
        let per_epoch = n_train.div_ceil(config.batch_size.max(1)) as u64;
        Self {
            total_iters: per_epoch * config.epochs as u64,
            model,
            config,
            main,
            probe,
            iter: 0,
            epoch: 0,
            topo_cache: Vec::new(),
        }
    }

    /// Reassembles a trainer from saved state.
    pub fn restore(
        config: TrainConfig,
        model: Model,
        main: AdamState,
        probe: AdamState,
        iter: u64,
        epoch: u64,
        total_iters: u64,
    ) -> Self {
        Self {
            model,
            config,
            main,
            probe,
            iter,
            epoch,
            total_iters,
            topo_cache: Vec::new(),
        }
    }

    fn topology(&mut self, batch: usize) -> Topology {
        if let Some(t) = self.topo_cache.iter().find(|t| t.batch() == batch) {
            return t.clone();
        }
        let t = Topology::new(&self.model.skeleton, batch);
        self.topo_cache.push(t.clone());
        t
    }

    /// One step of the causal-intervention objective.
    pub fn step(&mut self, batch: &Batch) -> Result<TrainRecord, TrainError> {
        let topo = self.topology(batch.len());
        let kind = StepKind::Intervention {
            lambda: self.config.lambda,
        };
        let sg = build_step_graph(&self.model, batch, &topo, kind, self.config.sigma_bins)?;
        self.apply(sg)
    }

    /// One step of the plain supervised baseline.
    pub fn supervised_step(&mut self, batch: &Batch) -> Result<TrainRecord, TrainError> {
        let topo = self.topology(batch.len());
        let sg = build_step_graph(
            &self.model,
            batch,
            &topo,
            StepKind::Supervised,
            self.config.sigma_bins,
        )?;
        self.apply(sg)
    }

    fn apply(&mut self, step: StepGraph) -> Result<TrainRecord, TrainError> {
        let (g, sg) = (&step.graph, &step.nodes);
        let grads = g.backward(sg.objective)?;
        let mut grads = param_grads(&grads, &sg.params)?;
        let lr = self.config.lr_at(self.iter, self.total_iters);

        let is_probe = Params::<Tensor>::is_probe;
        let mut main: Vec<&mut Tensor> = Vec::new();
        let mut probe: Vec<&mut Tensor> = Vec::new();
        for (name, t) in Params::<Tensor>::NAMES.iter().zip(grads.iter_mut()) {
            if is_probe(name) {
                probe.push(t);
            } else {
                main.push(t);
            }
        }
        let (grad_norm, clipped) = clip_global_norm(&mut main, self.config.grad_clip_norm);
        clip_global_norm(&mut probe, self.config.grad_clip_norm);

        let wd = self.config.weight_decay;
        adamw_step(&mut self.model.params, &grads, &mut self.main, lr, wd, |n| {
            !is_probe(n)
        });
        adamw_step(&mut self.model.params, &grads, &mut self.probe, lr, wd, is_probe);

        let record = TrainRecord {
            iter: self.iter,
            epoch: self.epoch,
            l_kpt: g.value(sg.l_kpt).item(),
            l_cf: sg.l_cf.map_or(0.0, |id| g.value(id).item()),
            l_total: g.value(sg.l_total).item(),
            l_score: g.value(sg.l_score).item(),
            lr,
            grad_norm,
            clipped,
            interventions: sg.mask.per_keypoint(),
        };
        self.iter += 1;
        Ok(record)
    }

    /// Batch order of an epoch; a pure function of `(seed, epoch)` so a
    /// resumed run replays the same order.
    pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        let mix = seed ^ epoch.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix));
        order
    }

    fn check_dataset(&self, data: &Dataset) -> Result<(), TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        if data.k != self.model.config.k {
            return Err(TrainError::DatasetShape {
                expected: self.model.config.k,
                actual: data.k,
            });
        }
        self.model.check_input(&data.features)?;
        Ok(())
    }

    /// One pass over `data` in seeded order, last batch possibly partial.
    pub fn run_epoch(&mut self, data: &Dataset) -> Result<Vec<TrainRecord>, TrainError> {
        self.run_epoch_with(data, false)
    }

    pub fn run_supervised_epoch(&mut self, data: &Dataset) -> Result<Vec<TrainRecord>, TrainError> {
        self.run_epoch_with(data, true)
    }

    fn run_epoch_with(
        &mut self,
        data: &Dataset,
        supervised: bool,
    ) -> Result<Vec<TrainRecord>, TrainError> {
        self.check_dataset(data)?;
        let order = Self::epoch_order(self.config.seed, self.epoch, data.len());
        let mut log = Vec::with_capacity(order.len().div_ceil(self.config.batch_size));
        for chunk in order.chunks(self.config.batch_size) {
            let batch = data.batch(chunk);
            let rec = if supervised {
                self.supervised_step(&batch)?
            } else {
                self.step(&batch)?
            };
            log.push(rec);
        }
        self.epoch += 1;
        Ok(log)
    }

    /// Runs the remaining epochs, calling `on_epoch` after each.
    pub fn fit<E: From<TrainError>>(
        &mut self,
        data: &Dataset,
        mut on_epoch: impl FnMut(&Trainer, &[TrainRecord]) -> Result<(), E>,
    ) -> Result<Vec<TrainRecord>, E> {
        let mut all = Vec::new();
        while (self.epoch as usize) < self.config.epochs {
            let recs = self.run_epoch(data)?;
            on_epoch(self, &recs)?;
            all.extend(recs);
        }
        Ok(all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> TrainConfig {
        TrainConfig {
            warmup_iters: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn warmup_and_cosine() {
        let c = cfg();
        assert_eq!(c.lr_at(0, 100), 1e-4);
        assert!((c.lr_at(9, 100) - 1e-3).abs() < 1e-18);
        assert_eq!(c.lr_at(10, 100), 1e-3);
        assert!((c.lr_at(100, 100) - 5e-5).abs() < 1e-18);
        let mid = c.lr_at(55, 100);
        assert!((mid - (5e-5 + 0.5 * (1e-3 - 5e-5))).abs() < 1e-15);
        for i in 10..100 {
            assert!(c.lr_at(i + 1, 100) <= c.lr_at(i, 100));
        }
    }

    #[test]
    fn clipping_halves_norm_70() {
        let mut a = Tensor::new(vec![2], vec![42.0, 0.0]).unwrap();
        let mut b = Tensor::new(vec![1], vec![56.0]).unwrap();
        let (n, clipped) = clip_global_norm(&mut [&mut a, &mut b], 35.0);
        assert_eq!(n, 70.0);
        assert!(clipped);
        assert_eq!(a.data(), &[21.0, 0.0]);
        assert_eq!(b.data(), &[28.0]);
        let (_, clipped) = clip_global_norm(&mut [&mut a, &mut b], 35.0);
        assert!(!clipped);
    }

    fn toy_params() -> Params<Tensor> {
        let c = ModelConfig {
            k: 2,
            d_in: 3,
            hidden: 2,
            d_emb: 2,
            bins_x: 4,
            bins_y: 4,
            strategy: Strategy::TopN(1),
        };
        Params::init(&c, 3)
    }

    #[test]
    fn zero_gradient_decoupled_decay() {
        let mut p = toy_params();
        let before = p.clone();
        let zeros = p.map(|_, t| Tensor::zeros(t.shape()));
        let mut st = AdamState::new(&p);
        adamw_step(&mut p, &zeros, &mut st, 1e-3, 0.05, |_| true);
        for (a, b) in p.iter().zip(before.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(*x, y - 1e-3 * 0.05 * y);
            }
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = toy_params();
        p.iter_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v = 1.0));
        let g = p.map(|_, t| Tensor::filled(t.shape(), 0.3));
        let mut st = AdamState::new(&p);
        adamw_step(&mut p, &g, &mut st, 0.01, 0.0, |n| n == "enc_w0");
        // bias-corrected first step is lr * sign(g) up to eps
        assert!(p.enc_w0.data().iter().all(|v| (v - 0.99).abs() < 1e-9));
        assert!(p.enc_wk.data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn config_validation_names_field() {
        let c = TrainConfig {
            strategy: Strategy::TopN(9),
            ..TrainConfig::default()
        };
        assert!(matches!(
            c.validate(8),
            Err(TrainError::Config { field: "intervention_n", .. })
        ));
        let c = TrainConfig {
            lambda: -0.1,
            ..TrainConfig::default()
        };
        assert!(matches!(c.validate(8), Err(TrainError::Config { field: "lambda", .. })));
    }

    #[test]
    fn epoch_order_is_a_permutation() {
        let o = Trainer::epoch_order(7, 3, 50);
        let mut s = o.clone();
        s.sort();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
        assert_eq!(o, Trainer::epoch_order(7, 3, 50));
        assert_ne!(o, Trainer::epoch_order(7, 4, 50));
    }
}
