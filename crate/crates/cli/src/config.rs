//! Run configuration files.
//!
//! A run config is TOML with three optional tables; every key has a
//! default and unknown keys are rejected.
//!
//! ```toml
//! [train]
//! epochs = 30
//! lambda = 0.1
//! strategy = "top_n"      # or "threshold"
//! intervention_n = 1
//! threshold = 0.7
//!
//! [bench]
//! confound_strength = 0.8
//! occlusion_rate = 0.3
//!
//! [data]
//! skeleton = "skeleton.toml"   # defaults to the built-in 8-keypoint toy
//! dataset = "train.bin"        # defaults to generating the train split
//! ```
//!
//! Relative paths in `[data]` resolve against the config file's directory.

use std::path::{Path, PathBuf};

use deconf_core::model::Strategy;
use deconf_core::skeleton::SkeletonSpec;
use deconf_core::synth::{BenchConfig, CorrelationMode};
use deconf_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::files;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    TopN,
    Threshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_floor: f64,
    pub weight_decay: f64,
    pub warmup_iters: usize,
    pub grad_clip_norm: f64,
    pub lambda: f64,
    pub strategy: StrategyKind,
    pub intervention_n: usize,
    pub threshold: f64,
    pub seed: u64,
    pub hidden: usize,
    pub d_emb: usize,
    pub bins: usize,
    pub sigma_bins: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self::from(&TrainConfig::default())
    }
}

impl From<&TrainConfig> for TrainSection {
    fn from(c: &TrainConfig) -> Self {
        let (strategy, intervention_n, threshold) = match c.strategy {
            Strategy::TopN(n) => (StrategyKind::TopN, n, 0.7),
            Strategy::Threshold(t) => (StrategyKind::Threshold, 1, t),
        };
        Self {
            epochs: c.epochs,
            batch_size: c.batch_size,
            lr: c.lr,
            lr_floor: c.lr_floor,
            weight_decay: c.weight_decay,
            warmup_iters: c.warmup_iters,
            grad_clip_norm: c.grad_clip_norm,
            lambda: c.lambda,
            strategy,
            intervention_n,
            threshold,
            seed: c.seed,
            hidden: c.hidden,
            d_emb: c.d_emb,
            bins: c.bins,
            sigma_bins: c.sigma_bins,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            lr_floor: self.lr_floor,
            weight_decay: self.weight_decay,
            warmup_iters: self.warmup_iters,
            grad_clip_norm: self.grad_clip_norm,
            lambda: self.lambda,
            strategy: match self.strategy {
                StrategyKind::TopN => Strategy::TopN(self.intervention_n),
                StrategyKind::Threshold => Strategy::Threshold(self.threshold),
            },
            seed: self.seed,
            hidden: self.hidden,
            d_emb: self.d_emb,
            bins: self.bins,
            sigma_bins: self.sigma_bins,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Confounded,
    Decorrelated,
}

impl From<ModeName> for CorrelationMode {
    fn from(m: ModeName) -> Self {
        match m {
            ModeName::Confounded => CorrelationMode::Confounded,
            ModeName::Decorrelated => CorrelationMode::Decorrelated,
        }
    }
}

impl From<CorrelationMode> for ModeName {
    fn from(m: CorrelationMode) -> Self {
        match m {
            CorrelationMode::Confounded => ModeName::Confounded,
            CorrelationMode::Decorrelated => ModeName::Decorrelated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchSection {
    pub n_contexts: usize,
    pub confound_strength: f64,
    pub occlusion_rate: f64,
    pub decoy_strength: f64,
    pub noise_sigma: f64,
    pub pose_jitter: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub train_mode: ModeName,
    pub test_mode: ModeName,
    pub seed: u64,
    pub world_seed: u64,
}

impl Default for BenchSection {
    fn default() -> Self {
        Self::from(&BenchConfig::default())
    }
}

impl From<&BenchConfig> for BenchSection {
    fn from(b: &BenchConfig) -> Self {
        Self {
            n_contexts: b.n_contexts,
            confound_strength: b.confound_strength,
            occlusion_rate: b.occlusion_rate,
            decoy_strength: b.decoy_strength,
            noise_sigma: b.noise_sigma,
            pose_jitter: b.pose_jitter,
            n_train: b.n_train,
            n_test: b.n_test,
            train_mode: b.train_mode.into(),
            test_mode: b.test_mode.into(),
            seed: b.seed,
            world_seed: b.world_seed,
        }
    }
}

impl BenchSection {
    pub fn to_config(&self) -> Result<BenchConfig, CliError> {
        let c = BenchConfig {
            n_contexts: self.n_contexts,
            confound_strength: self.confound_strength,
            occlusion_rate: self.occlusion_rate,
            decoy_strength: self.decoy_strength,
            noise_sigma: self.noise_sigma,
            pose_jitter: self.pose_jitter,
            n_train: self.n_train,
            n_test: self.n_test,
            train_mode: self.train_mode.into(),
            test_mode: self.test_mode.into(),
            seed: self.seed,
            world_seed: self.world_seed,
        };
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skeleton: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainSection,
    pub bench: BenchSection,
    pub data: DataSection,
}

/// Parses `value` as a TOML literal, falling back to a bare string.
fn literal(value: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.into()))
}

/// Applies `key=value` overrides. Keys are `section.field` or a bare field
/// name that exists in exactly one section.
fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<(), CliError> {
    let defaults = toml::Table::try_from(RunConfig::default())
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let sections = ["train", "bench", "data"];
    for ov in overrides {
        let (key, value) = ov
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{ov}` is not key=value")))?;
        let key = key.trim();
        let (section, field) = match key.split_once('.') {
            Some((s, f)) => (s.to_string(), f.to_string()),
            None => {
                let owners: Vec<&str> = sections
                    .iter()
                    .copied()
                    .filter(|s| {
                        defaults
                            .get(*s)
                            .and_then(|t| t.as_table())
                            .is_some_and(|t| t.contains_key(key))
                            || (*s == "data" && matches!(key, "skeleton" | "dataset"))
                    })
                    .collect();
                match owners.as_slice() {
                    [one] => (one.to_string(), key.to_string()),
                    [] => return Err(CliError::Config(format!("unknown override key `{key}`"))),
                    _ => {
                        return Err(CliError::Config(format!(
                            "override key `{key}` is ambiguous; qualify it as one of {}",
                            owners
                                .iter()
                                .map(|s| format!("{s}.{key}"))
                                .collect::<Vec<_>>()
                                .join(", ")
                        )))
                    }
                }
            }
        };
        let entry = table
            .entry(section.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let Some(t) = entry.as_table_mut() else {
            return Err(CliError::Config(format!("`{section}` is not a table")));
        };
        t.insert(field, literal(value.trim()));
    }
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        apply_overrides(&mut table, overrides)?;
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }

    /// Reads a config file and resolves its relative data paths.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
        let mut cfg = Self::parse(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.skeleton, &mut cfg.data.dataset].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serialises")
    }

    pub fn skeleton(&self) -> Result<SkeletonSpec, CliError> {
        match &self.data.skeleton {
            Some(p) => files::load_skeleton(p),
            None => Ok(SkeletonSpec::toy()),
        }
    }

    pub fn train_config(&self, k: usize) -> Result<TrainConfig, CliError> {
        let c = self.train.to_config();
        c.validate(k)?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let back = RunConfig::parse(&c.to_toml(), &[]).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::parse("", &[]).unwrap(), c);
    }

    #[test]
    fn unknown_key_is_config_error() {
        let e = RunConfig::parse("[train]\nlamda = 0.2\n", &[]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("lamda"), "{e}");
    }

    #[test]
    fn overrides() {
        let c = RunConfig::parse("", &["lambda=0".into(), "bench.seed=4".into()]).unwrap();
        assert_eq!(c.train.lambda, 0.0);
        assert_eq!(c.bench.seed, 4);
        let c = RunConfig::parse("", &["strategy=threshold".into()]).unwrap();
        assert_eq!(c.train.strategy, StrategyKind::Threshold);
        let e = RunConfig::parse("", &["seed=1".into()]).unwrap_err();
        assert!(e.to_string().contains("ambiguous"));
        assert!(RunConfig::parse("", &["nope=1".into()]).is_err());
    }

    #[test]
    fn bad_value_names_field() {
        let e = RunConfig::parse("[train]\nepochs = \"many\"\n", &[]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let c = RunConfig::parse("[train]\nintervention_n = 9\n", &[]).unwrap();
        let e = c.train_config(8).unwrap_err();
        assert!(e.to_string().contains("intervention_n"), "{e}");
    }
}
