//! Line-delimited JSON outputs.
//!
//! Every file holds one JSON object per line with a `"kind"` tag. Floats
//! are written in shortest round-trip form, so a value read back is
//! bit-identical to the one written.
//!
//! | file              | kinds                                              |
//! |-------------------|----------------------------------------------------|
//! | `train.jsonl`     | `step`, `epoch`                                    |
//! | `metrics.jsonl`   | `pck`, `scores`, `enrichment`, `frequency`         |
//! | `embeddings.jsonl`| `canonical`, `embedding`                           |

use std::io::{BufWriter, Write};
use std::path::Path;

use deconf_core::synth::{EnrichmentReport, GroupFrequency, PckReport, Quartiles, ScoreValidation};
use deconf_core::trainer::TrainRecord;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Step {
        iter: u64,
        epoch: u64,
        l_kpt: f64,
        l_cf: f64,
        l_total: f64,
        l_score: f64,
        lr: f64,
        grad_norm: f64,
        clipped: bool,
        /// Selection count per keypoint type in this batch.
        interventions: Vec<u32>,
    },
    Epoch {
        epoch: u64,
        iters: u64,
        mean_l_kpt: f64,
        mean_l_cf: f64,
        mean_l_total: f64,
        checkpoint_sha256: String,
    },
    Pck {
        split: String,
        radius: f64,
        overall: f64,
        groups: Vec<GroupValue>,
    },
    Scores {
        split: String,
        occluded: Option<QuartileRecord>,
        visible: Option<QuartileRecord>,
        rank_sum_u: Option<f64>,
        rank_sum_z: Option<f64>,
        p_value: Option<f64>,
    },
    Enrichment {
        split: String,
        n: usize,
        easy_drop: f64,
        kept: usize,
        excluded: usize,
        mean_delta: f64,
        ci_low: f64,
        ci_high: f64,
    },
    Frequency {
        split: String,
        groups: Vec<FrequencyValue>,
    },
    Canonical {
        keypoint: usize,
        name: String,
        values: Vec<f64>,
    },
    Embedding {
        sample: usize,
        keypoint: usize,
        name: String,
        context: usize,
        occluded: bool,
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupValue {
    pub group: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyValue {
    pub group: String,
    /// Fraction of the group's keypoints that were selected.
    pub rate: f64,
    /// Selections in the group over all evaluated keypoints.
    pub share: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuartileRecord {
    pub count: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl From<Quartiles> for QuartileRecord {
    fn from(q: Quartiles) -> Self {
        Self {
            count: q.count,
            q1: q.q1,
            median: q.median,
            q3: q.q3,
        }
    }
}

impl From<&TrainRecord> for Record {
    fn from(r: &TrainRecord) -> Self {
        Record::Step {
            iter: r.iter,
            epoch: r.epoch,
            l_kpt: r.l_kpt,
            l_cf: r.l_cf,
            l_total: r.l_total,
            l_score: r.l_score,
            lr: r.lr,
            grad_norm: r.grad_norm,
            clipped: r.clipped,
            interventions: r.interventions.clone(),
        }
    }
}

impl Record {
    pub fn epoch(epoch: u64, steps: &[TrainRecord], checkpoint_sha256: String) -> Self {
        let n = steps.len().max(1) as f64;
        let mean = |f: fn(&TrainRecord) -> f64| steps.iter().map(f).sum::<f64>() / n;
        Record::Epoch {
            epoch,
            iters: steps.len() as u64,
            mean_l_kpt: mean(|r| r.l_kpt),
            mean_l_cf: mean(|r| r.l_cf),
            mean_l_total: mean(|r| r.l_total),
            checkpoint_sha256,
        }
    }

    pub fn pck(split: &str, r: &PckReport) -> Self {
        Record::Pck {
            split: split.into(),
            radius: r.radius,
            overall: r.overall,
            groups: r
                .per_group
                .iter()
                .map(|(g, v)| GroupValue {
                    group: g.clone(),
                    value: *v,
                })
                .collect(),
        }
    }

    pub fn scores(split: &str, v: &ScoreValidation) -> Self {
        Record::Scores {
            split: split.into(),
            occluded: v.occluded.map(Into::into),
            visible: v.visible.map(Into::into),
            rank_sum_u: v.test.map(|t| t.u),
            rank_sum_z: v.test.map(|t| t.z),
            p_value: v.test.map(|t| t.p_value),
        }
    }

    pub fn enrichment(split: &str, r: &EnrichmentReport) -> Self {
        Record::Enrichment {
            split: split.into(),
            n: r.n,
            easy_drop: r.easy_drop,
            kept: r.kept,
            excluded: r.excluded,
            mean_delta: r.mean_delta,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
        }
    }

    pub fn frequency(split: &str, f: &[GroupFrequency]) -> Self {
        Record::Frequency {
            split: split.into(),
            groups: f
                .iter()
                .map(|g| FrequencyValue {
                    group: g.group.clone(),
                    rate: g.rate,
                    share: g.share,
                })
                .collect(),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("records serialise")
    }
}

/// Writes `records` to `path`, one per line, replacing any existing file.
pub fn write_all(path: &Path, records: &[Record]) -> Result<(), CliError> {
    let f = std::fs::File::create(path).map_err(|e| CliError::write(path, e))?;
    let mut w = BufWriter::new(f);
    for r in records {
        writeln!(w, "{}", r.to_line()).map_err(|e| CliError::write(path, e))?;
    }
    w.flush().map_err(|e| CliError::write(path, e))
}

pub fn read_all(path: &Path) -> Result<Vec<Record>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Format {
                what: "record file",
                detail: format!("{} line {}: {e}", path.display(), i + 1),
            })
        })
        .collect()
}

/// The lines of a record file whose parsed record satisfies `keep`,
/// returned unchanged.
pub fn retain_lines(path: &Path, keep: impl Fn(&Record) -> bool) -> Result<String, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    let mut out = String::with_capacity(text.len());
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: Record = serde_json::from_str(line).map_err(|e| CliError::Format {
            what: "record file",
            detail: format!("{} line {}: {e}", path.display(), i + 1),
        })?;
        if keep(&r) {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}
