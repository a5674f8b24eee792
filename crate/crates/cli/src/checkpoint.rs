//! Checkpoint files.
//!
//! Layout, little-endian throughout:
//!
//! | bytes        | content                                          |
//! |--------------|--------------------------------------------------|
//! | 8            | magic `DECONFCK`                                 |
//! | 4            | format version (`u32`, currently 1)              |
//! | 4            | header length `H` (`u32`)                        |
//! | H            | UTF-8 TOML header: train config, model shape,    |
//! |              | optimiser counters and the skeleton              |
//! | 4            | tensor count `T` (`u32`)                         |
//! | T × entry    | `u16` name length, name, `u8` rank, `u64` dims   |
//! | payload      | every tensor's `f64` values in table order       |
//!
//! Tensor names are the parameter names, and `main.m.<name>`,
//! `main.v.<name>`, `probe.m.<name>`, `probe.v.<name>` for the two
//! optimiser groups.

use std::io::Write;
use std::path::Path;

use deconf_core::model::{Model, ModelConfig, Params};
use deconf_core::tensor::Tensor;
use deconf_core::trainer::{AdamState, Trainer};
use serde::{Deserialize, Serialize};

use crate::config::TrainSection;
use crate::error::CliError;
use crate::files::SkeletonFile;

pub const MAGIC: &[u8; 8] = b"DECONFCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelShape {
    pub k: usize,
    pub d_in: usize,
    pub hidden: usize,
    pub d_emb: usize,
    pub bins_x: usize,
    pub bins_y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainState {
    pub iter: u64,
    pub epoch: u64,
    pub total_iters: u64,
    pub main_steps: u64,
    pub probe_steps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub train: TrainSection,
    pub model: ModelShape,
    pub state: TrainState,
    pub skeleton: SkeletonFile,
}

fn format_err(detail: impl Into<String>) -> CliError {
    CliError::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

fn named<'a>(prefix: &str, p: &'a Params<Tensor>) -> Vec<(String, &'a Tensor)> {
    Params::<Tensor>::NAMES
        .iter()
        .zip(p.iter())
        .map(|(n, t)| (format!("{prefix}{n}"), t))
        .collect()
}

pub fn encode(trainer: &Trainer) -> Vec<u8> {
    let m = &trainer.model.config;
    let header = Header {
        train: TrainSection::from(&trainer.config),
        model: ModelShape {
            k: m.k,
            d_in: m.d_in,
            hidden: m.hidden,
            d_emb: m.d_emb,
            bins_x: m.bins_x,
            bins_y: m.bins_y,
        },
        state: TrainState {
            iter: trainer.iter,
            epoch: trainer.epoch,
            total_iters: trainer.total_iters,
            main_steps: trainer.main.step,
            probe_steps: trainer.probe.step,
        },
        skeleton: SkeletonFile::from(&trainer.model.skeleton),
    };
    let text = toml::to_string(&header).expect("header serialises");
    let mut tensors = named("", &trainer.model.params);
    tensors.extend(named("main.m.", &trainer.main.m));
    tensors.extend(named("main.v.", &trainer.main.v));
    tensors.extend(named("probe.m.", &trainer.probe.m));
    tensors.extend(named("probe.v.", &trainer.probe.v));

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for d in t.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
    }
    for (_, t) in &tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or_else(|| format_err(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CliError> {
        Ok(self.take(N)?.try_into().expect("sized take"))
    }
}

/// Restores a trainer, including optimiser moments and counters.
pub fn decode(bytes: &[u8]) -> Result<Trainer, CliError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(format_err("bad magic bytes"));
    }
    let version = u32::from_le_bytes(r.array()?);
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(r.array()?) as usize;
    let text = std::str::from_utf8(r.take(hlen)?).map_err(|e| format_err(e.to_string()))?;
    let header: Header = toml::from_str(text).map_err(|e| format_err(e.to_string()))?;

    let count = u32::from_le_bytes(r.array()?) as usize;
    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let len = u16::from_le_bytes(r.array()?) as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|e| format_err(e.to_string()))?
            .to_string();
        let rank = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(r.array()?) as usize);
        }
        table.push((name, shape));
    }
    let mut tensors = std::collections::HashMap::with_capacity(count);
    for (name, shape) in table {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| Ok(f64::from_le_bytes(r.array()?)))
            .collect::<Result<Vec<_>, CliError>>()?;
        let t = Tensor::new(shape, data).map_err(|e| format_err(e.to_string()))?;
        tensors.insert(name, t);
    }
    if r.pos != bytes.len() {
        return Err(format_err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let mut group = |prefix: &str| {
        Params::<Tensor>::try_from_fn(|n| {
            tensors
                .remove(&format!("{prefix}{n}"))
                .ok_or_else(|| format_err(format!("missing tensor {prefix}{n}")))
        })
    };
    let params = group("")?;
    let main = AdamState {
        step: header.state.main_steps,
        m: group("main.m.")?,
        v: group("main.v.")?,
    };
    let probe = AdamState {
        step: header.state.probe_steps,
        m: group("probe.m.")?,
        v: group("probe.v.")?,
    };
    if let Some(extra) = tensors.keys().min() {
        return Err(format_err(format!("unexpected tensor {extra}")));
    }

    let config = header.train.to_config();
    let skeleton = header.skeleton.to_spec()?;
    let s = &header.model;
    let mc = ModelConfig {
        k: s.k,
        d_in: s.d_in,
        hidden: s.hidden,
        d_emb: s.d_emb,
        bins_x: s.bins_x,
        bins_y: s.bins_y,
        strategy: config.strategy,
    };
    main.m.check_shapes(&mc)?;
    main.v.check_shapes(&mc)?;
    probe.m.check_shapes(&mc)?;
    probe.v.check_shapes(&mc)?;
    let model = Model::from_params(mc, skeleton, params)?;
    let st = header.state;
    Ok(Trainer::restore(
        config,
        model,
        main,
        probe,
        st.iter,
        st.epoch,
        st.total_iters,
    ))
}

/// Writes through a temporary sibling and renames, so a crash never leaves
/// a partial checkpoint behind. Returns the file's SHA-256.
pub fn save(path: &Path, trainer: &Trainer) -> Result<String, CliError> {
    let bytes = encode(trainer);
    let tmp = path.with_extension("tmp");
    let write = || -> std::io::Result<()> {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    };
    write().map_err(|e| CliError::write(path, e))?;
    Ok(crate::dataset::sha256_hex(&bytes))
}

pub fn load(path: &Path) -> Result<Trainer, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::read(path, e))?;
    decode(&bytes)
}
