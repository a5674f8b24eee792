//! Binary dataset files.
//!
//! Layout, all integers and floats little-endian:
//!
//! | bytes            | content                                   |
//! |------------------|-------------------------------------------|
//! | 8                | magic `DECONFDS`                          |
//! | 4                | format version (`u32`, currently 1)       |
//! | 4                | keypoints `K` (`u32`)                     |
//! | 4                | feature width `D` (`u32`)                 |
//! | 8                | sample count `N` (`u64`)                  |
//! | N × record       | fixed-width sample records                |
//!
//! A record holds `D` features (`f64`), `2K` coordinates (`f64`, x then y
//! per keypoint), `K` visibility bytes, `K` occlusion bytes, the context id
//! and the pose cluster (`u32` each).

use std::io::{Read, Write};
use std::path::Path;

use deconf_core::synth::PoseSample;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MAGIC: &[u8; 8] = b"DECONFDS";
pub const VERSION: u32 = 1;

pub fn record_size(k: usize, d: usize) -> usize {
    8 * d + 16 * k + 2 * k + 8
}

pub fn encode(k: usize, samples: &[PoseSample]) -> Result<Vec<u8>, CliError> {
    let d = samples.first().map_or(0, |s| s.features.len());
    let mut out = Vec::with_capacity(28 + samples.len() * record_size(k, d));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for (i, s) in samples.iter().enumerate() {
        if s.features.len() != d || s.gt_coords.len() != k {
            return Err(CliError::Mismatch(format!("sample {i} has a different shape")));
        }
        s.features.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        for c in &s.gt_coords {
            out.extend_from_slice(&c[0].to_le_bytes());
            out.extend_from_slice(&c[1].to_le_bytes());
        }
        out.extend(s.visibility.iter().map(|v| u8::from(*v)));
        out.extend(s.occluded.iter().map(|v| u8::from(*v)));
        out.extend_from_slice(&(s.context_id as u32).to_le_bytes());
        out.extend_from_slice(&(s.pose_cluster as u32).to_le_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let Some(end) = end else {
            return Err(CliError::Format {
                what: "dataset",
                detail: format!("truncated at byte {}", self.pos),
            });
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn flag(&mut self) -> Result<bool, CliError> {
        match self.take(1)?[0] {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(CliError::Format {
                what: "dataset",
                detail: format!("flag byte {b} at {}", self.pos - 1),
            }),
        }
    }
}

/// Returns `K` and the samples.
pub fn decode(bytes: &[u8]) -> Result<(usize, Vec<PoseSample>), CliError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(CliError::Format {
            what: "dataset",
            detail: "bad magic bytes".into(),
        });
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(CliError::Format {
            what: "dataset",
            detail: format!("unsupported version {version}"),
        });
    }
    let k = c.u32()? as usize;
    let d = c.u32()? as usize;
    let n = c.u64()? as usize;
    let expected = n.checked_mul(record_size(k, d)).and_then(|v| v.checked_add(28));
    if expected != Some(bytes.len()) {
        return Err(CliError::Format {
            what: "dataset",
            detail: format!("{} bytes for {n} records of K={k}, D={d}", bytes.len()),
        });
    }
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let features = (0..d).map(|_| c.f64()).collect::<Result<_, _>>()?;
        let gt_coords = (0..k)
            .map(|_| Ok([c.f64()?, c.f64()?]))
            .collect::<Result<_, CliError>>()?;
        let visibility = (0..k).map(|_| c.flag()).collect::<Result<_, _>>()?;
        let occluded = (0..k).map(|_| c.flag()).collect::<Result<_, _>>()?;
        let context_id = c.u32()? as usize;
        let pose_cluster = c.u32()? as usize;
        samples.push(PoseSample {
            features,
            gt_coords,
            visibility,
            occluded,
            context_id,
            pose_cluster,
        });
    }
    Ok((k, samples))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes a dataset file and returns its SHA-256.
pub fn save(path: &Path, k: usize, samples: &[PoseSample]) -> Result<String, CliError> {
    let bytes = encode(k, samples)?;
    let mut f = std::fs::File::create(path).map_err(|e| CliError::write(path, e))?;
    f.write_all(&bytes).map_err(|e| CliError::write(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn load(path: &Path) -> Result<(usize, Vec<PoseSample>), CliError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::read(path, e))?;
    decode(&bytes)
}
