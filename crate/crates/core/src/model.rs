//! The keypoint pipeline: encoder, scoring head, counterfactual
//! replacement, intra-part edge convolution, inter-part hyperedge gating and
//! the SimCC prediction head.
//!
//! Embeddings of a batch of `B` instances with `K` keypoints are laid out as
//! a `[B*K, d]` matrix, row `b*K + k` holding keypoint `k` of instance `b`.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::autodiff::{Graph, GraphError, NodeId};
use crate::skeleton::SkeletonSpec;
use crate::tensor::Tensor;

/// Standard deviation of the initial canonical embeddings.
pub const CANONICAL_INIT_STD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("intervention budget n = {n} exceeds K = {k}")]
    BudgetTooLarge { n: usize, k: usize },
    #[error("features have {actual} columns, model expects {expected}")]
    InputWidth { expected: usize, actual: usize },
    #[error("model expects K = {expected} keypoints, skeleton has {actual}")]
    KeypointCount { expected: usize, actual: usize },
    #[error("parameter {name} has shape {actual:?}, expected {expected:?}")]
    ParamShape {
        name: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
}

/// How keypoints are picked for counterfactual replacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    /// The `n` highest-scoring keypoints of every instance.
    TopN(usize),
    /// Every keypoint whose score exceeds the threshold.
    Threshold(f64),
}

impl Strategy {
    pub fn is_noop(&self) -> bool {
        matches!(self, Strategy::TopN(0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub k: usize,
    pub d_in: usize,
    pub hidden: usize,
    pub d_emb: usize,
    pub bins_x: usize,
    pub bins_y: usize,
    pub strategy: Strategy,
}

macro_rules! params {
    ($($field:ident),* $(,)?) => {
        /// One value per learnable tensor of the model. Instantiated with
        /// [`Tensor`] for storage and [`NodeId`] inside a graph.
        #[derive(Debug, Clone, PartialEq)]
        pub struct Params<T> {
            $(pub $field: T,)*
        }

        impl<T> Params<T> {
            pub const NAMES: &'static [&'static str] = &[$(stringify!($field)),*];

            /// Builds every field from its name.
            pub fn from_fn(mut f: impl FnMut(&'static str) -> T) -> Self {
                Params { $($field: f(stringify!($field)),)* }
            }

            pub fn try_from_fn<E>(
                mut f: impl FnMut(&'static str) -> Result<T, E>,
            ) -> Result<Self, E> {
                Ok(Params { $($field: f(stringify!($field))?,)* })
            }

            pub fn iter(&self) -> impl Iterator<Item = &T> {
                [$(&self.$field),*].into_iter()
            }

            pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
                [$(&mut self.$field),*].into_iter()
            }

            pub fn map<U>(&self, mut f: impl FnMut(&'static str, &T) -> U) -> Params<U> {
                Params { $($field: f(stringify!($field), &self.$field),)* }
            }

            pub fn try_map<U, E>(
                &self,
                mut f: impl FnMut(&'static str, &T) -> Result<U, E>,
            ) -> Result<Params<U>, E> {
                Ok(Params { $($field: f(stringify!($field), &self.$field)?,)* })
            }
        }
    };
}

params!(
    enc_w0, enc_wk, enc_bk, score_wx, score_bx, score_wy, score_by, intra_w, intra_b, group_w,
    group_b, psi_w1, psi_b1, psi_w2, psi_b2, head_wx, head_bx, head_wy, head_by, canonical,
);

impl<T> Params<T> {
    /// Whether a parameter belongs to the scoring head, which is fitted by
    /// its own auxiliary objective rather than by the main loss.
    pub fn is_probe(name: &str) -> bool {
        name.starts_with("score_")
    }
}

impl Params<Tensor> {
    /// Expected shape of every tensor for a configuration.
    pub fn shapes(c: &ModelConfig) -> Params<Vec<usize>> {
        let (k, d) = (c.k, c.d_emb);
        Params {
            enc_w0: vec![c.d_in, c.hidden],
            enc_wk: vec![c.hidden, k * d],
            enc_bk: vec![1, k * d],
            score_wx: vec![d, c.bins_x],
            score_bx: vec![1, c.bins_x],
            score_wy: vec![d, c.bins_y],
            score_by: vec![1, c.bins_y],
            intra_w: vec![2 * d, d],
            intra_b: vec![1, d],
            group_w: vec![2 * d, d],
            group_b: vec![1, d],
            psi_w1: vec![d, d],
            psi_b1: vec![1, d],
            psi_w2: vec![d, d],
            psi_b2: vec![1, d],
            head_wx: vec![d, c.bins_x],
            head_bx: vec![1, c.bins_x],
            head_wy: vec![d, c.bins_y],
            head_by: vec![1, c.bins_y],
            canonical: vec![k, d],
        }
    }

    /// Seeded initialisation: weights `N(0, 1/fan_in)`, zero biases and
    /// canonical embeddings `N(0, 0.01²)`.
    pub fn init(c: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::shapes(c).map(|name, shape| {
            let n: usize = shape.iter().product();
            let std = if name == "canonical" {
                CANONICAL_INIT_STD
            } else if shape[0] == 1 {
                0.0
            } else {
                1.0 / libm::sqrt(shape[0] as f64)
            };
            let data = if std == 0.0 {
                vec![0.0; n]
            } else {
                let dist = Normal::new(0.0, std).expect("positive std");
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            };
            Tensor::new(shape.clone(), data).expect("shape")
        })
    }

    pub fn check_shapes(&self, c: &ModelConfig) -> Result<(), ModelError> {
        let shapes = Self::shapes(c);
        for ((name, t), s) in Self::NAMES.iter().zip(self.iter()).zip(shapes.iter()) {
            if t.shape() != s.as_slice() {
                return Err(ModelError::ParamShape {
                    name,
                    expected: s.clone(),
                    actual: t.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    /// Records every tensor as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph) -> Params<NodeId> {
        self.map(|_, t| g.leaf(t.clone().with_grad()))
    }

    pub fn count(&self) -> usize {
        self.iter().map(Tensor::len).sum()
    }
}

/// Which keypoints of which instance were replaced.
#[derive(Debug, Clone, PartialEq)]
pub struct InterventionMask {
    pub batch: usize,
    pub k: usize,
    /// Row-major `[batch, k]` flags.
    pub selected: Vec<bool>,
    pub strategy: Strategy,
}

impl InterventionMask {
    pub fn empty(batch: usize, k: usize) -> Self {
        Self {
            batch,
            k,
            selected: vec![false; batch * k],
            strategy: Strategy::TopN(0),
        }
    }

    pub fn is_selected(&self, b: usize, k: usize) -> bool {
        self.selected[b * self.k + k]
    }

    pub fn count(&self) -> usize {
        self.selected.iter().filter(|s| **s).count()
    }

    pub fn count_in(&self, b: usize) -> usize {
        self.selected[b * self.k..(b + 1) * self.k]
            .iter()
            .filter(|s| **s)
            .count()
    }

    /// Times each keypoint type was selected across the batch.
    pub fn per_keypoint(&self) -> Vec<u32> {
        let mut out = vec![0u32; self.k];
        for (i, s) in self.selected.iter().enumerate() {
            if *s {
                out[i % self.k] += 1;
            }
        }
        out
    }
}

/// Per-keypoint 1-D coordinate distributions, rows laid out like the
/// embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordDistributions {
    pub px: Tensor,
    pub py: Tensor,
}

/// Graph handles of a pair of coordinate distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordNodes {
    pub px: NodeId,
    pub py: NodeId,
}

impl CoordNodes {
    pub fn values(&self, g: &Graph) -> CoordDistributions {
        CoordDistributions {
            px: g.value(self.px).clone(),
            py: g.value(self.py).clone(),
        }
    }
}

/// Index lists for the graph layers of one batch size.
#[derive(Debug, Clone)]
pub struct Topology {
    batch: usize,
    k: usize,
    groups: usize,
    edge_src: Vec<usize>,
    edge_nbr: Vec<usize>,
    edge_segments: Vec<Vec<usize>>,
    group_members: Vec<Vec<usize>>,
    group_src: Vec<usize>,
    group_nbr: Vec<usize>,
    group_segments: Vec<Vec<usize>>,
    gate_sources: Vec<Vec<usize>>,
    canonical_rows: Vec<usize>,
}

impl Topology {
    pub fn new(spec: &SkeletonSpec, batch: usize) -> Self {
        let k = spec.k();
        let groups = spec.hyperedges().len();
        let (mut edge_src, mut edge_nbr, mut edge_segments) = (Vec::new(), Vec::new(), Vec::new());
        for b in 0..batch {
            for kk in 0..k {
                let nbrs = spec.neighbors(kk).expect("index in range");
                let start = edge_src.len();
                for &j in nbrs {
                    edge_src.push(b * k + kk);
                    edge_nbr.push(b * k + j);
                }
                edge_segments.push((start..edge_src.len()).collect());
            }
        }
        let mut group_members = Vec::with_capacity(batch * groups);
        let (mut group_src, mut group_nbr, mut group_segments) = (Vec::new(), Vec::new(), Vec::new());
        for b in 0..batch {
            for h in spec.hyperedges() {
                group_members.push(h.members.iter().map(|&m| b * k + m).collect());
            }
            // fully connected group graph, self-loops included
            for e in 0..groups {
                let start = group_src.len();
                for e2 in 0..groups {
                    group_src.push(b * groups + e);
                    group_nbr.push(b * groups + e2);
                }
                group_segments.push((start..group_src.len()).collect());
            }
        }
        let gate_sources = (0..batch)
            .flat_map(|b| (0..k).map(move |kk| (b, kk)))
            .map(|(b, kk)| spec.groups_of(kk).iter().map(|&e| b * groups + e).collect())
            .collect();
        let canonical_rows = (0..batch).flat_map(|_| 0..k).collect();
        Self {
            batch,
            k,
            groups,
            edge_src,
            edge_nbr,
            edge_segments,
            group_members,
            group_src,
            group_nbr,
            group_segments,
            gate_sources,
            canonical_rows,
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn groups(&self) -> usize {
        self.groups
    }
}

/// Shared hidden layer followed by one linear head per keypoint:
/// `f_k = W_k relu(W_0 x) + b_k`. Returns the `[B*K, d]` embeddings.
pub fn encode(
    g: &mut Graph,
    x: NodeId,
    p: &Params<NodeId>,
    k: usize,
    d: usize,
) -> Result<NodeId, GraphError> {
    let pre = g.matmul(x, p.enc_w0)?;
    let hidden = g.relu(pre)?;
    let f = g.linear(hidden, p.enc_wk, p.enc_bk)?;
    let rows = g.shape(f)[0];
    g.reshape(f, &[rows * k, d])
}

/// Two linear maps to x and y bins followed by a softmax over each axis.
pub fn simcc_head(
    g: &mut Graph,
    f: NodeId,
    wx: NodeId,
    bx: NodeId,
    wy: NodeId,
    by: NodeId,
) -> Result<CoordNodes, GraphError> {
    let lx = g.linear(f, wx, bx)?;
    let ly = g.linear(f, wy, by)?;
    Ok(CoordNodes {
        px: g.softmax(lx)?,
        py: g.softmax(ly)?,
    })
}

/// `s = 1 - (max P_x + max P_y) / 2` for every row.
pub fn confounder_scores(dists: &CoordDistributions) -> Vec<f64> {
    let peak = |t: &Tensor, r: usize| t.row(r).iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..dists.px.rows())
        .map(|r| 1.0 - 0.5 * (peak(&dists.px, r) + peak(&dists.py, r)))
        .collect()
}

/// Picks the keypoints to replace from `[batch, k]` row-major scores.
///
/// Top-n breaks ties towards the lower keypoint index.
pub fn select_intervention(
    scores: &[f64],
    batch: usize,
    k: usize,
    strategy: Strategy,
) -> Result<InterventionMask, ModelError> {
    let mut selected = vec![false; batch * k];
    match strategy {
        Strategy::TopN(n) => {
            if n > k {
                return Err(ModelError::BudgetTooLarge { n, k });
            }
            let mut order: Vec<usize> = (0..k).collect();
            for b in 0..batch {
                let s = &scores[b * k..(b + 1) * k];
                order.iter_mut().enumerate().for_each(|(i, o)| *o = i);
                order.sort_by(|&i, &j| s[j].total_cmp(&s[i]).then(i.cmp(&j)));
                for &i in &order[..n] {
                    selected[b * k + i] = true;
                }
            }
        }
        Strategy::Threshold(tau) => {
            for (sel, &s) in selected.iter_mut().zip(scores) {
                *sel = s > tau;
            }
        }
    }
    Ok(InterventionMask {
        batch,
        k,
        selected,
        strategy,
    })
}

/// `f'_{b,k} = z_k` where the mask is set and `f_{b,k}` elsewhere.
/// Non-selected rows are copied bit for bit; the gradient of a selected row
/// flows into the canonical table.
pub fn counterfactual_replace(
    g: &mut Graph,
    f: NodeId,
    mask: &InterventionMask,
    canonical: NodeId,
    topo: &Topology,
) -> Result<NodeId, GraphError> {
    let z = g.gather_rows(canonical, topo.canonical_rows.clone())?;
    g.mask_select(mask.selected.clone(), z, f)
}

/// One edge-convolution layer with a residual connection:
/// `out_i = x_i + max_j relu(W [x_i ; x_j - x_i] + b)`.
fn edge_conv(
    g: &mut Graph,
    x: NodeId,
    src: &[usize],
    nbr: &[usize],
    segments: &[Vec<usize>],
    w: NodeId,
    b: NodeId,
) -> Result<NodeId, GraphError> {
    let xs = g.gather_rows(x, src.to_vec())?;
    let xn = g.gather_rows(x, nbr.to_vec())?;
    let diff = g.sub(xn, xs)?;
    let edge = g.concat_cols(xs, diff)?;
    let pre = g.linear(edge, w, b)?;
    let msg = g.relu(pre)?;
    let agg = g.gather_max(msg, segments.to_vec())?;
    g.add(agg, x)
}

/// Edge convolution over the physical skeleton edges.
pub fn intra_part_edgeconv(
    g: &mut Graph,
    f: NodeId,
    topo: &Topology,
    p: &Params<NodeId>,
) -> Result<NodeId, GraphError> {
    edge_conv(
        g,
        f,
        &topo.edge_src,
        &topo.edge_nbr,
        &topo.edge_segments,
        p.intra_w,
        p.intra_b,
    )
}

/// Pools each hyperedge, exchanges messages between hyperedges and gates
/// every keypoint channel-wise by the mean sigmoid attention of the
/// hyperedges containing it.
pub fn inter_part_attention(
    g: &mut Graph,
    h: NodeId,
    topo: &Topology,
    p: &Params<NodeId>,
) -> Result<NodeId, GraphError> {
    let pooled = g.mean_rows(h, topo.group_members.clone())?;
    let mixed = edge_conv(
        g,
        pooled,
        &topo.group_src,
        &topo.group_nbr,
        &topo.group_segments,
        p.group_w,
        p.group_b,
    )?;
    let att = psi(g, mixed, p)?;
    let gates = g.sigmoid(att)?;
    let gate = g.mean_rows(gates, topo.gate_sources.clone())?;
    g.mul(h, gate)
}

/// The attention MLP, one hidden relu layer of width `d`.
fn psi(g: &mut Graph, x: NodeId, p: &Params<NodeId>) -> Result<NodeId, GraphError> {
    let a = g.linear(x, p.psi_w1, p.psi_b1)?;
    let a = g.relu(a)?;
    g.linear(a, p.psi_w2, p.psi_b2)
}

/// Final SimCC head on refined embeddings.
pub fn predict(g: &mut Graph, f: NodeId, p: &Params<NodeId>) -> Result<CoordNodes, GraphError> {
    simcc_head(g, f, p.head_wx, p.head_bx, p.head_wy, p.head_by)
}

/// Hierarchical reasoning followed by the prediction head. The same weights
/// serve the counterfactual path (`F'`) and the observational path (`F`).
pub fn reason_and_predict(
    g: &mut Graph,
    f: NodeId,
    topo: &Topology,
    p: &Params<NodeId>,
) -> Result<CoordNodes, GraphError> {
    let h = intra_part_edgeconv(g, f, topo, p)?;
    let refined = inter_part_attention(g, h, topo, p)?;
    predict(g, refined, p)
}

/// Argmax bin centre per axis, normalised to `[0, 1]`; ties go to the lower
/// bin. Returns one `[x, y]` per row.
pub fn decode_coords(dists: &CoordDistributions) -> Vec<[f64; 2]> {
    let decode = |t: &Tensor, r: usize| {
        let row = t.row(r);
        let mut best = 0;
        for (i, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = i;
            }
        }
        (best as f64 + 0.5) / row.len() as f64
    };
    (0..dists.px.rows())
        .map(|r| [decode(&dists.px, r), decode(&dists.py, r)])
        .collect()
}

/// Result of the counterfactual path at inference time.
#[derive(Debug, Clone)]
pub struct Inference {
    pub embeddings: Tensor,
    pub score_dists: CoordDistributions,
    pub scores: Vec<f64>,
    pub mask: InterventionMask,
    pub dists: CoordDistributions,
}

impl Inference {
    pub fn coords(&self) -> Vec<[f64; 2]> {
        decode_coords(&self.dists)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub skeleton: SkeletonSpec,
    pub params: Params<Tensor>,
}

impl Model {
    pub fn new(config: ModelConfig, skeleton: SkeletonSpec, seed: u64) -> Result<Self, ModelError> {
        let params = Params::init(&config, seed);
        Self::from_params(config, skeleton, params)
    }

    pub fn from_params(
        config: ModelConfig,
        skeleton: SkeletonSpec,
        params: Params<Tensor>,
    ) -> Result<Self, ModelError> {
        if skeleton.k() != config.k {
            return Err(ModelError::KeypointCount {
                expected: config.k,
                actual: skeleton.k(),
            });
        }
        if let Strategy::TopN(n) = config.strategy {
            if n > config.k {
                return Err(ModelError::BudgetTooLarge { n, k: config.k });
            }
        }
        params.check_shapes(&config)?;
        Ok(Self {
            config,
            skeleton,
            params,
        })
    }

    pub fn check_input(&self, features: &Tensor) -> Result<(), ModelError> {
        if features.shape().len() != 2 || features.cols() != self.config.d_in {
            return Err(ModelError::InputWidth {
                expected: self.config.d_in,
                actual: features.cols(),
            });
        }
        Ok(())
    }

    /// Scores, selects, replaces and predicts for a `[B, d_in]` batch.
    /// Only the counterfactual path runs; parameters are not modified.
    pub fn infer(&self, features: &Tensor) -> Result<Inference, ModelError> {
        self.check_input(features)?;
        let batch = features.rows();
        let topo = Topology::new(&self.skeleton, batch);
        let mut g = Graph::new();
        let p = self.params.map(|_, t| g.constant(t.clone()));
        let x = g.constant(features.clone());
        let f = encode(&mut g, x, &p, self.config.k, self.config.d_emb)?;
        let sd = simcc_head(&mut g, f, p.score_wx, p.score_bx, p.score_wy, p.score_by)?;
        let score_dists = sd.values(&g);
        let scores = confounder_scores(&score_dists);
        let mask = select_intervention(&scores, batch, self.config.k, self.config.strategy)?;
        let fp = counterfactual_replace(&mut g, f, &mask, p.canonical, &topo)?;
        let out = reason_and_predict(&mut g, fp, &topo, &p)?;
        Ok(Inference {
            embeddings: g.value(f).clone(),
            score_dists,
            scores,
            mask,
            dists: out.values(&g),
        })
    }
}
