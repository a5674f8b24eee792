//! Planted-confounder pose benchmark and evaluation metrics.
//!
//! A discrete context `c` drives both the observation (a context signature
//! appended to the features, and a context-specific decoy written over the
//! feature block of occluded keypoints) and the label (the pose cluster is
//! biased towards cluster `c` with strength `rho` in confounded mode). The
//! decorrelated mode draws the cluster uniformly, so a model that learned
//! to read the pose off the context is penalised at test time.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::model::{InterventionMask, Model, ModelError};
use crate::skeleton::SkeletonSpec;
use crate::tensor::Tensor;
use crate::trainer::Dataset;

/// Width of the context signature appended to the features.
pub const SIGNATURE_DIM: usize = 8;
/// Width of the per-keypoint feature block.
pub const BLOCK_DIM: usize = 4;
/// Bootstrap resamples used by the confidence intervals.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
/// Minimum distance between the templates of two clusters at every keypoint.
pub const MIN_TEMPLATE_SEPARATION: f64 = 0.08;
const TEMPLATE_SPREAD: f64 = 0.14;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("invalid bench config field `{field}`: {reason}")]
    Config { field: &'static str, reason: String },
    #[error("could not place {0} separated cluster templates")]
    Templates(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationMode {
    Confounded,
    Decorrelated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Test => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub n_contexts: usize,
    pub confound_strength: f64,
    pub occlusion_rate: f64,
    pub decoy_strength: f64,
    pub noise_sigma: f64,
    pub pose_jitter: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub train_mode: CorrelationMode,
    pub test_mode: CorrelationMode,
    /// Seeds the per-sample draws.
    pub seed: u64,
    /// Seeds the fixed world: templates, signatures and decoys.
    pub world_seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n_contexts: 4,
            confound_strength: 0.8,
            occlusion_rate: 0.3,
            decoy_strength: 1.0,
            noise_sigma: 0.02,
            pose_jitter: 0.015,
            n_train: 5000,
            n_test: 1000,
            train_mode: CorrelationMode::Confounded,
            test_mode: CorrelationMode::Decorrelated,
            seed: 0,
            world_seed: 0,
        }
    }
}

fn config_err(field: &'static str, reason: &str) -> BenchError {
    BenchError::Config {
        field,
        reason: reason.into(),
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.n_contexts == 0 {
            return Err(config_err("n_contexts", "must be at least 1"));
        }
        if !unit(self.confound_strength) {
            return Err(config_err("confound_strength", "must lie in [0, 1]"));
        }
        if !unit(self.occlusion_rate) {
            return Err(config_err("occlusion_rate", "must lie in [0, 1]"));
        }
        for (field, v) in [
            ("decoy_strength", self.decoy_strength),
            ("noise_sigma", self.noise_sigma),
            ("pose_jitter", self.pose_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err(field, "must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn d_in(k: usize) -> usize {
        k * BLOCK_DIM + SIGNATURE_DIM
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSample {
    pub features: Vec<f64>,
    pub gt_coords: Vec<[f64; 2]>,
    pub visibility: Vec<bool>,
    pub occluded: Vec<bool>,
    pub context_id: usize,
    pub pose_cluster: usize,
}

/// Resting pose for the eight-keypoint toy skeleton; other sizes are laid
/// out on a circle.
pub fn base_pose(k: usize) -> Vec<[f64; 2]> {
    if k == 8 {
        return vec![
            [0.50, 0.18],
            [0.50, 0.32],
            [0.38, 0.36],
            [0.62, 0.36],
            [0.28, 0.55],
            [0.72, 0.55],
            [0.40, 0.82],
            [0.60, 0.82],
        ];
    }
    (0..k)
        .map(|i| {
            let a = 2.0 * core::f64::consts::PI * i as f64 / k as f64;
            [0.5 + 0.3 * libm::cos(a), 0.5 + 0.3 * libm::sin(a)]
        })
        .collect()
}

/// The fixed part of the benchmark, drawn once from the world seed.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub k: usize,
    /// One template pose per cluster; there are as many clusters as
    /// contexts.
    pub templates: Vec<Vec<[f64; 2]>>,
    pub signatures: Vec<[f64; SIGNATURE_DIM]>,
    pub decoys: Vec<[f64; BLOCK_DIM]>,
}

impl World {
    pub fn new(k: usize, n_contexts: usize, world_seed: u64) -> Result<Self, BenchError> {
        let mut rng = ChaCha8Rng::seed_from_u64(world_seed);
        let base = base_pose(k);
        let mut templates = vec![Vec::with_capacity(k); n_contexts];
        for b in &base {
            let mut placed: Vec<[f64; 2]> = Vec::new();
            let mut tries = 0;
            while placed.len() < n_contexts {
                tries += 1;
                if tries > 10_000 {
                    return Err(BenchError::Templates(n_contexts));
                }
                let p = [
                    (b[0] + rng.random_range(-TEMPLATE_SPREAD..=TEMPLATE_SPREAD)).clamp(0.05, 0.95),
                    (b[1] + rng.random_range(-TEMPLATE_SPREAD..=TEMPLATE_SPREAD)).clamp(0.05, 0.95),
                ];
                if placed.iter().all(|q| dist(p, *q) >= MIN_TEMPLATE_SEPARATION) {
                    placed.push(p);
                }
            }
            for (t, p) in templates.iter_mut().zip(placed) {
                t.push(p);
            }
        }
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let signatures = (0..n_contexts)
            .map(|_| core::array::from_fn(|_| normal.sample(&mut rng)))
            .collect();
        let decoys = (0..n_contexts)
            .map(|_| core::array::from_fn(|_| rng.random_range(0.0..1.0)))
            .collect();
        Ok(Self {
            k,
            templates,
            signatures,
            decoys,
        })
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    libm::hypot(a[0] - b[0], a[1] - b[1])
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sample_rng(seed: u64, split: Split, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(splitmix(seed ^ split.tag()) ^ index as u64))
}

/// Draws sample `index` of a split. A pure function of its arguments.
pub fn generate_sample(
    world: &World,
    config: &BenchConfig,
    split: Split,
    index: usize,
) -> PoseSample {
    let mut rng = sample_rng(config.seed, split, index);
    let m = world.templates.len();
    let mode = match split {
        Split::Train => config.train_mode,
        Split::Test => config.test_mode,
    };
    let context_id = rng.random_range(0..m);
    let pose_cluster = match mode {
        CorrelationMode::Decorrelated => rng.random_range(0..m),
        CorrelationMode::Confounded => {
            if rng.random::<f64>() < config.confound_strength {
                context_id
            } else {
                rng.random_range(0..m)
            }
        }
    };
    let jitter = Normal::new(0.0, config.pose_jitter).expect("finite jitter");
    let noise = Normal::new(0.0, config.noise_sigma).expect("finite noise");
    let k = world.k;
    let mut gt_coords = Vec::with_capacity(k);
    let mut occluded = Vec::with_capacity(k);
    let mut features = Vec::with_capacity(BenchConfig::d_in(k));
    for t in &world.templates[pose_cluster] {
        let x = (t[0] + jitter.sample(&mut rng)).clamp(0.0, 1.0);
        let y = (t[1] + jitter.sample(&mut rng)).clamp(0.0, 1.0);
        gt_coords.push([x, y]);
        let occ = rng.random::<f64>() < config.occlusion_rate;
        occluded.push(occ);
        let block = [x, y, 1.0 - x, 1.0 - y];
        for (j, v) in block.iter().enumerate() {
            let e = noise.sample(&mut rng);
            features.push(if occ {
                config.decoy_strength * world.decoys[context_id][j] + e
            } else {
                v + e
            });
        }
    }
    features.extend_from_slice(&world.signatures[context_id]);
    PoseSample {
        features,
        gt_coords,
        visibility: vec![true; k],
        occluded,
        context_id,
        pose_cluster,
    }
}

pub fn generate_split(
    world: &World,
    config: &BenchConfig,
    split: Split,
    count: usize,
) -> Vec<PoseSample> {
    (0..count)
        .map(|i| generate_sample(world, config, split, i))
        .collect()
}

/// Train and test splits of a benchmark.
pub fn generate_dataset(
    config: &BenchConfig,
    k: usize,
) -> Result<(Vec<PoseSample>, Vec<PoseSample>), BenchError> {
    config.validate()?;
    let world = World::new(k, config.n_contexts, config.world_seed)?;
    Ok((
        generate_split(&world, config, Split::Train, config.n_train),
        generate_split(&world, config, Split::Test, config.n_test),
    ))
}

pub fn to_dataset(samples: &[PoseSample], k: usize) -> Dataset {
    let d = samples.first().map_or(BenchConfig::d_in(k), |s| s.features.len());
    let mut feats = Vec::with_capacity(samples.len() * d);
    let mut coords = Vec::with_capacity(samples.len() * k);
    let mut vis = Vec::with_capacity(samples.len() * k);
    for s in samples {
        feats.extend_from_slice(&s.features);
        coords.extend_from_slice(&s.gt_coords);
        vis.extend_from_slice(&s.visibility);
    }
    Dataset {
        k,
        features: Tensor::new(vec![samples.len(), d], feats).expect("rectangular samples"),
        coords,
        visibility: vis,
    }
}

/// Model outputs over a sample set, rows laid out as `sample * K + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub k: usize,
    pub coords: Vec<[f64; 2]>,
    pub scores: Vec<f64>,
    pub selected: Vec<bool>,
}

impl Evaluation {
    pub fn instances(&self) -> usize {
        self.coords.len() / self.k.max(1)
    }

    pub fn errors(&self, samples: &[PoseSample]) -> Vec<f64> {
        let gt = samples.iter().flat_map(|s| s.gt_coords.iter());
        self.coords.iter().zip(gt).map(|(p, g)| dist(*p, *g)).collect()
    }

    pub fn mask(&self) -> InterventionMask {
        InterventionMask {
            batch: self.instances(),
            k: self.k,
            selected: self.selected.clone(),
            strategy: crate::model::Strategy::TopN(0),
        }
    }
}

/// Runs the counterfactual path over `samples` in chunks.
pub fn evaluate(model: &Model, samples: &[PoseSample]) -> Result<Evaluation, ModelError> {
    let k = model.config.k;
    let mut out = Evaluation {
        k,
        coords: Vec::with_capacity(samples.len() * k),
        scores: Vec::with_capacity(samples.len() * k),
        selected: Vec::with_capacity(samples.len() * k),
    };
    for chunk in samples.chunks(256) {
        let data = to_dataset(chunk, k);
        let inf = model.infer(&data.features)?;
        out.coords.extend(inf.coords());
        out.scores.extend(inf.scores);
        out.selected.extend(inf.mask.selected);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PckReport {
    pub radius: f64,
    pub overall: f64,
    pub per_group: Vec<(String, f64)>,
}

/// Fraction of visible keypoints within `radius` of the ground truth.
pub fn pck(
    errors: &[f64],
    visibility: &[bool],
    k: usize,
    radius: f64,
    spec: &SkeletonSpec,
) -> PckReport {
    let rate = |filter: &dyn Fn(usize) -> bool| {
        let (mut hit, mut total) = (0usize, 0usize);
        for (i, (e, v)) in errors.iter().zip(visibility).enumerate() {
            if *v && filter(i % k) {
                total += 1;
                hit += usize::from(*e <= radius);
            }
        }
        if total == 0 { 0.0 } else { hit as f64 / total as f64 }
    };
    PckReport {
        radius,
        overall: rate(&|_| true),
        per_group: spec
            .hyperedges()
            .iter()
            .map(|h| (h.name.clone(), rate(&|kk| h.members.contains(&kk))))
            .collect(),
    }
}

pub fn evaluate_pck(
    model: &Model,
    samples: &[PoseSample],
    radius: f64,
) -> Result<PckReport, ModelError> {
    let ev = evaluate(model, samples)?;
    let vis: Vec<bool> = samples.iter().flat_map(|s| s.visibility.iter().copied()).collect();
    Ok(pck(&ev.errors(samples), &vis, ev.k, radius, &model.skeleton))
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Percentile-bootstrap interval for the mean of `values`.
pub fn bootstrap_mean_ci(values: &[f64], resamples: usize, level: f64, seed: u64) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = values.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    (quantile(&means, a), quantile(&means, 1.0 - a))
}

/// Per-instance inputs of the enrichment analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceErrors {
    pub errors: Vec<f64>,
    pub scores: Vec<f64>,
    pub visible: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrichmentReport {
    pub n: usize,
    pub easy_drop: f64,
    pub kept: usize,
    /// Instances without a visible keypoint outside the top-n.
    pub excluded: usize,
    pub mean_delta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `Δ_i` for every instance with a non-empty complement, in input order.
    pub deltas: Vec<Option<f64>>,
}

/// Top-n visible keypoints by score, ties to the lower index.
pub fn top_visible(scores: &[f64], visible: &[bool], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).filter(|&i| visible[i]).collect();
    idx.sort_by(|&i, &j| scores[j].total_cmp(&scores[i]).then(i.cmp(&j)));
    idx.truncate(n);
    idx
}

/// `Δ_i`: mean error over the top-n visible keypoints minus the mean over
/// the remaining visible ones. `None` when the remainder is empty.
pub fn instance_delta(inst: &InstanceErrors, n: usize) -> Option<f64> {
    let top = top_visible(&inst.scores, &inst.visible, n);
    let rest: Vec<usize> = (0..inst.errors.len())
        .filter(|i| inst.visible[*i] && !top.contains(i))
        .collect();
    if rest.is_empty() || top.is_empty() {
        return None;
    }
    let m = |ix: &[usize]| ix.iter().map(|&i| inst.errors[i]).sum::<f64>() / ix.len() as f64;
    Some(m(&top) - m(&rest))
}

/// Within-instance top-n enrichment. Instances are ranked by mean visible
/// error and the easiest fraction `easy_drop` is discarded before
/// averaging.
pub fn enrichment(
    instances: &[InstanceErrors],
    n: usize,
    easy_drop: f64,
    seed: u64,
) -> EnrichmentReport {
    let deltas: Vec<Option<f64>> = instances.iter().map(|i| instance_delta(i, n)).collect();
    let mut valid: Vec<(f64, f64)> = instances
        .iter()
        .zip(&deltas)
        .filter_map(|(inst, d)| {
            let vis: Vec<f64> = inst
                .errors
                .iter()
                .zip(&inst.visible)
                .filter(|(_, v)| **v)
                .map(|(e, _)| *e)
                .collect();
            d.map(|d| (mean(&vis), d))
        })
        .collect();
    let excluded = instances.len() - valid.len();
    valid.sort_by(|a, b| a.0.total_cmp(&b.0));
    let drop = libm::floor(easy_drop * valid.len() as f64) as usize;
    let kept: Vec<f64> = valid[drop.min(valid.len())..].iter().map(|v| v.1).collect();
    let mean_delta = if kept.is_empty() { f64::NAN } else { mean(&kept) };
    let (lo, hi) = bootstrap_mean_ci(&kept, BOOTSTRAP_RESAMPLES, 0.95, seed);
    EnrichmentReport {
        n,
        easy_drop,
        kept: kept.len(),
        excluded,
        mean_delta,
        // percentile intervals can in principle miss the point estimate
        ci_low: lo.min(mean_delta),
        ci_high: hi.max(mean_delta),
        deltas,
    }
}

pub fn enrichment_analysis(
    model: &Model,
    samples: &[PoseSample],
    n: usize,
    easy_drop: f64,
    seed: u64,
) -> Result<EnrichmentReport, ModelError> {
    let ev = evaluate(model, samples)?;
    let errors = ev.errors(samples);
    let k = ev.k;
    let instances: Vec<InstanceErrors> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| InstanceErrors {
            errors: errors[i * k..(i + 1) * k].to_vec(),
            scores: ev.scores[i * k..(i + 1) * k].to_vec(),
            visible: s.visibility.clone(),
        })
        .collect();
    Ok(enrichment(&instances, n, easy_drop, seed))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quartiles {
    pub count: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let s = sorted(values);
        Some(Self {
            count: s.len(),
            q1: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            q3: quantile(&s, 0.75),
        })
    }
}

/// Mann–Whitney U with midranks and the tie-corrected normal
/// approximation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSum {
    /// U statistic of the first sample.
    pub u: f64,
    pub z: f64,
    /// Two-sided p-value.
    pub p_value: f64,
}

pub fn rank_sum(a: &[f64], b: &[f64]) -> Option<RankSum> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = a
        .iter()
        .map(|v| (*v, true))
        .chain(b.iter().map(|v| (*v, false)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = all.len();
    let (mut rank_a, mut tie_term) = (0.0, 0.0);
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        rank_a += mid * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let nn = n1 + n2;
    let u = rank_a - n1 * (n1 + 1.0) / 2.0;
    let var = n1 * n2 / 12.0 * ((nn + 1.0) - tie_term / (nn * (nn - 1.0)));
    let z = if var > 0.0 {
        (u - n1 * n2 / 2.0) / libm::sqrt(var)
    } else {
        0.0
    };
    Some(RankSum {
        u,
        z,
        p_value: libm::erfc(libm::fabs(z) / core::f64::consts::SQRT_2),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreValidation {
    pub occluded: Option<Quartiles>,
    pub visible: Option<Quartiles>,
    /// Occluded versus non-occluded scores.
    pub test: Option<RankSum>,
}

impl ScoreValidation {
    /// Occluded median above the non-occluded one with the rank-sum test
    /// rejecting equality at `alpha`.
    pub fn separates(&self, alpha: f64) -> bool {
        match (self.occluded, self.visible, self.test) {
            (Some(o), Some(v), Some(t)) => o.median > v.median && t.p_value < alpha,
            _ => false,
        }
    }
}

pub fn score_validation(scores: &[f64], occluded: &[bool]) -> ScoreValidation {
    let pick = |want: bool| -> Vec<f64> {
        scores
            .iter()
            .zip(occluded)
            .filter(|(_, o)| **o == want)
            .map(|(s, _)| *s)
            .collect()
    };
    let (occ, vis) = (pick(true), pick(false));
    ScoreValidation {
        occluded: Quartiles::of(&occ),
        visible: Quartiles::of(&vis),
        test: rank_sum(&occ, &vis),
    }
}

pub fn confounder_score_validation(
    model: &Model,
    samples: &[PoseSample],
) -> Result<ScoreValidation, ModelError> {
    let ev = evaluate(model, samples)?;
    let occ: Vec<bool> = samples.iter().flat_map(|s| s.occluded.iter().copied()).collect();
    Ok(score_validation(&ev.scores, &occ))
}

/// How often keypoints of one hyperedge were replaced.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFrequency {
    pub group: String,
    /// Selected member keypoints over all member keypoints.
    pub rate: f64,
    /// Selected member keypoints over all evaluated keypoints.
    pub share: f64,
}

pub fn intervention_frequency(mask: &InterventionMask, spec: &SkeletonSpec) -> Vec<GroupFrequency> {
    let total = (mask.batch * mask.k).max(1) as f64;
    spec.hyperedges()
        .iter()
        .map(|h| {
            let mut hit = 0usize;
            for b in 0..mask.batch {
                hit += h.members.iter().filter(|&&m| mask.is_selected(b, m)).count();
            }
            let members = (mask.batch * h.members.len()).max(1) as f64;
            GroupFrequency {
                group: h.name.clone(),
                rate: hit as f64 / members,
                share: hit as f64 / total,
            }
        })
        .collect()
}

/// Plug-in mutual information (nats) between two discrete labels.
pub fn mutual_information(a: &[usize], b: &[usize]) -> f64 {
    let na = a.iter().max().map_or(0, |m| m + 1);
    let nb = b.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0.0; na * nb];
    for (x, y) in a.iter().zip(b) {
        joint[x * nb + y] += 1.0;
    }
    let n = a.len() as f64;
    let pa: Vec<f64> = (0..na).map(|x| (0..nb).map(|y| joint[x * nb + y]).sum::<f64>() / n).collect();
    let pb: Vec<f64> = (0..nb).map(|y| (0..na).map(|x| joint[x * nb + y]).sum::<f64>() / n).collect();
    let mut mi = 0.0;
    for x in 0..na {
        for y in 0..nb {
            let p = joint[x * nb + y] / n;
            if p > 0.0 {
                mi += p * libm::log(p / (pa[x] * pb[y]));
            }
        }
    }
    mi
}

/// Total-variation distance between the empirical distributions of two
/// label samples.
pub fn tv_distance(a: &[usize], b: &[usize]) -> f64 {
    let m = a.iter().chain(b).max().map_or(0, |m| m + 1);
    let hist = |v: &[usize]| {
        let mut h = vec![0.0; m];
        v.iter().for_each(|x| h[*x] += 1.0 / v.len() as f64);
        h
    };
    let (ha, hb) = (hist(a), hist(b));
    0.5 * ha.iter().zip(&hb).map(|(x, y)| libm::fabs(x - y)).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedComparison {
    pub mean_diff: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub all_positive: bool,
}

/// Paired bootstrap over per-seed differences `a_i - b_i`.
pub fn paired_bootstrap(a: &[f64], b: &[f64], seed: u64) -> PairedComparison {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (lo, hi) = bootstrap_mean_ci(&d, BOOTSTRAP_RESAMPLES * 10, 0.95, seed);
    PairedComparison {
        mean_diff: mean(&d),
        ci_low: lo,
        ci_high: hi,
        all_positive: d.iter().all(|x| *x > 0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_templates_are_separated() {
        let w = World::new(8, 4, 3).unwrap();
        for k in 0..8 {
            for a in 0..4 {
                for b in a + 1..4 {
                    assert!(dist(w.templates[a][k], w.templates[b][k]) >= MIN_TEMPLATE_SEPARATION);
                }
            }
        }
    }

    #[test]
    fn samples_are_deterministic() {
        let c = BenchConfig::default();
        let w = World::new(8, 4, 0).unwrap();
        let a = generate_sample(&w, &c, Split::Train, 17);
        let b = generate_sample(&w, &c, Split::Train, 17);
        assert!(a.features.iter().zip(&b.features).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a, b);
        assert_ne!(a, generate_sample(&w, &c, Split::Test, 17));
        assert_eq!(a.features.len(), BenchConfig::d_in(8));
    }

    #[test]
    fn no_occlusion_means_no_flags() {
        let c = BenchConfig {
            occlusion_rate: 0.0,
            ..BenchConfig::default()
        };
        let w = World::new(8, 4, 0).unwrap();
        for s in generate_split(&w, &c, Split::Train, 200) {
            assert!(s.occluded.iter().all(|o| !o));
        }
    }

    #[test]
    fn pck_fractions() {
        let spec = SkeletonSpec::toy();
        let vis = vec![true; 8];
        assert_eq!(pck(&[0.0; 8], &vis, 8, 0.05, &spec).overall, 1.0);
        assert_eq!(pck(&[0.1; 8], &vis, 8, 0.05, &spec).overall, 0.0);
        let half = [0.0, 0.1, 0.0, 0.1, 0.0, 0.1, 0.0, 0.1];
        assert_eq!(pck(&half, &vis, 8, 0.05, &spec).overall, 0.5);
    }

    #[test]
    fn enrichment_examples() {
        let flat = InstanceErrors {
            errors: vec![3.0; 4],
            scores: vec![0.1, 0.9, 0.3, 0.2],
            visible: vec![true; 4],
        };
        assert_eq!(instance_delta(&flat, 2), Some(0.0));
        let built = InstanceErrors {
            errors: vec![2.0, 10.0, 10.0, 2.0],
            scores: vec![0.1, 0.9, 0.8, 0.2],
            visible: vec![true; 4],
        };
        assert_eq!(instance_delta(&built, 2), Some(8.0));
        let r = enrichment(&[built.clone(), built], 2, 0.0, 0);
        assert_eq!((r.mean_delta, r.ci_low, r.ci_high), (8.0, 8.0, 8.0));
        let tiny = InstanceErrors {
            errors: vec![1.0, 2.0],
            scores: vec![0.5, 0.4],
            visible: vec![true, false],
        };
        assert_eq!(instance_delta(&tiny, 1), None);
        assert_eq!(enrichment(&[tiny], 1, 0.0, 0).excluded, 1);
    }

    #[test]
    fn rank_sum_separates_shifted_samples() {
        let a: Vec<f64> = (0..50).map(|i| i as f64 + 30.0).collect();
        let b: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let r = rank_sum(&a, &b).unwrap();
        assert!(r.z > 0.0 && r.p_value < 1e-6);
        let r = rank_sum(&b, &b).unwrap();
        assert!((r.p_value - 1.0).abs() < 1e-12);
        // all tied
        let r = rank_sum(&[1.0; 5], &[1.0; 7]).unwrap();
        assert_eq!(r.z, 0.0);
    }

    #[test]
    fn rank_sum_u_small_case() {
        // a = {1, 4}, b = {2, 3}: ranks of a are 1 and 4, U = 5 - 3 = 2
        let r = rank_sum(&[1.0, 4.0], &[2.0, 3.0]).unwrap();
        assert_eq!(r.u, 2.0);
    }

    #[test]
    fn frequency_bounds() {
        let spec = SkeletonSpec::toy();
        let none = InterventionMask::empty(3, 8);
        assert!(intervention_frequency(&none, &spec).iter().all(|g| g.rate == 0.0));
        let all = InterventionMask {
            selected: vec![true; 24],
            ..none
        };
        assert!(intervention_frequency(&all, &spec).iter().all(|g| g.rate == 1.0));
    }

    #[test]
    fn mutual_information_basics() {
        let a: Vec<usize> = (0..400).map(|i| i % 4).collect();
        assert!((mutual_information(&a, &a) - libm::log(4.0)).abs() < 1e-12);
        let b: Vec<usize> = (0..400).map(|i| (i / 4) % 4).collect();
        assert!(mutual_information(&a, &b).abs() < 1e-12);
    }

    #[test]
    fn quantiles() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&s, 0.5), 3.0);
        assert_eq!(quantile(&s, 0.25), 2.0);
        assert_eq!(quantile(&s, 0.1), 1.4);
    }
}
