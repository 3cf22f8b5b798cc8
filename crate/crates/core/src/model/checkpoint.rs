//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes          | content                                            |
//! |----------------|----------------------------------------------------|
//! | 8              | magic `BKALCKPT`                                   |
//! | 4              | format version (`u32`, currently 1)                |
//! | 4              | header length `H` (`u32`)                          |
//! | H              | UTF-8 JSON header (see [`Header`])                 |
//! | 8 * N          | weights, `f64`                                     |
//! | 8 * N          | Adam first moments, `f64`                          |
//! | 8 * N          | Adam second moments, `f64`                         |
//! | 32             | SHA-256 of every preceding byte                    |
//!
//! `N` is the header's `n_params`, which must equal the sum of the segment
//! sizes implied by `dims`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::SimConfig;
use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::model::adam::AdamState;
use crate::model::lstm::{ModelDims, ModelWeights, ParamLayout, Segment};

pub const MAGIC: &[u8; 8] = b"BKALCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub loss: LossKind,
    pub d: usize,
    pub q_th: f64,
    pub epoch: usize,
    pub master_seed: u64,
    pub experiment_id: u64,
    pub sim: SimConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub weights: ModelWeights,
    pub adam: AdamState,
    pub meta: TrainingMeta,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dims: ModelDims,
    segments: Vec<Segment>,
    n_params: usize,
    adam_step: u64,
    meta: TrainingMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let layout = self.weights.layout();
        let n = layout.len();
        if self.weights.params.len() != n || self.adam.m.len() != n || self.adam.v.len() != n {
            return Err(Error::Shape("checkpoint arrays disagree with model dims".into()));
        }
        let header = Header {
            dims: self.weights.dims,
            segments: layout.segments(),
            n_params: n,
            adam_step: self.adam.step,
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Input(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + 24 * n + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for arr in [&self.weights.params, &self.adam.m, &self.adam.v] {
            for v in arr.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::CorruptCheckpoint {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 16 {
            return Err(corrupt("file shorter than the fixed preamble"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + hlen + 32 {
            return Err(corrupt("truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[16..16 + hlen])
            .map_err(|e| corrupt(&format!("unreadable header: {e}")))?;
        let n = header.n_params;
        let body_end = 16 + hlen + 24 * n;
        if bytes.len() != body_end + 32 {
            return Err(corrupt(&format!(
                "expected {} bytes for {n} parameters, found {}",
                body_end + 32,
                bytes.len()
            )));
        }
        if Sha256::digest(&bytes[..body_end])[..] != bytes[body_end..] {
            return Err(corrupt("checksum mismatch"));
        }
        let layout = ParamLayout::new(header.dims);
        if layout.len() != n || layout.segments() != header.segments {
            return Err(Error::Shape(format!(
                "header segments do not match dims {:?}",
                header.dims
            )));
        }
        let read = |block: usize| -> Vec<f64> {
            let start = 16 + hlen + block * 8 * n;
            bytes[start..start + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect()
        };
        Ok(Checkpoint {
            weights: ModelWeights {
                dims: header.dims,
                params: read(0),
            },
            adam: AdamState {
                m: read(1),
                v: read(2),
                step: header.adam_step,
            },
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
