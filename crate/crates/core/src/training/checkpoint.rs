//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MDGN"                      4 bytes magic
//! u32                         format version
//! u64                         header length in bytes
//! JSON header                 shapes, configs, normalizer, epoch, counts, RNG state
//! f64 blocks                  parameters in storage order,
//!                             then Adam first moments, second moments (if present),
//!                             then the per-epoch loss history
//! u32                         CRC-32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphdata::Normalizer;
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::{Matrix, Rng};

use super::adam::AdamState;
use super::train::TrainConfig;

pub const MAGIC: &[u8; 4] = b"MDGN";
pub const FORMAT_VERSION: u32 = 1;

/// Largest header accepted on load; guards against absurd allocations from corrupt lengths.
const MAX_HEADER_BYTES: u64 = 1 << 26;

/// Origin of a finetuned checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    /// CRC-32 of the encoded base checkpoint.
    pub base_fingerprint: u32,
    pub base_epoch: usize,
    pub finetune_samples: usize,
    pub finetune_epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub normalizer: Normalizer,
    pub train_config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Shuffle stream, positioned at the start of the next epoch.
    pub rng: Rng,
    pub loss_history: Vec<f64>,
    pub adam: Option<AdamState>,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: (usize, usize),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    normalizer: Normalizer,
    train_config: TrainConfig,
    epoch: usize,
    loss_history_len: usize,
    rng: Rng,
    tensors: Vec<TensorEntry>,
    adam_step: Option<u64>,
    provenance: Option<Provenance>,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.params.config.clone(),
            normalizer: self.normalizer,
            train_config: self.train_config.clone(),
            epoch: self.epoch,
            loss_history_len: self.loss_history.len(),
            rng: self.rng.clone(),
            tensors: self
                .params
                .tensor_names()
                .into_iter()
                .zip(self.params.tensors())
                .map(|(name, t)| TensorEntry {
                    name,
                    shape: t.shape(),
                })
                .collect(),
            adam_step: self.adam.as_ref().map(|a| a.t),
            provenance: self.provenance,
        };
        let header = serde_json::to_vec(&header)?;

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let mut put = |values: &[f64]| {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for t in self.params.tensors() {
            put(t.as_slice());
        }
        if let Some(adam) = &self.adam {
            for t in adam.m.iter().chain(&adam.v) {
                put(t.as_slice());
            }
        }
        put(&self.loss_history);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Corrupt("missing MDGN magic bytes".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
        if header_len > MAX_HEADER_BYTES {
            return Err(Error::Corrupt(format!("implausible header length {header_len}")));
        }
        let header: Header = serde_json::from_slice(r.take(header_len as usize)?)
            .map_err(|e| Error::Corrupt(format!("unreadable header: {e}")))?;

        let layout = header.model.tensor_layout();
        let declared: Vec<(String, (usize, usize))> = header
            .tensors
            .iter()
            .map(|t| (t.name.clone(), t.shape))
            .collect();
        if layout != declared {
            return Err(Error::Corrupt(
                "declared tensor shapes do not match the model configuration".into(),
            ));
        }
        let values: usize = layout.iter().map(|(_, (a, b))| a * b).sum();
        let adam_values = if header.adam_step.is_some() { 2 * values } else { 0 };
        let expected = r.pos + 8 * (values + adam_values + header.loss_history_len) + 4;
        if bytes.len() < expected {
            return Err(Error::Corrupt(format!(
                "truncated: {} bytes present, {expected} expected",
                bytes.len()
            )));
        }
        if bytes.len() > expected {
            return Err(Error::Corrupt(format!(
                "{} unexpected trailing bytes",
                bytes.len() - expected
            )));
        }
        let stored_crc = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
        if crc32fast::hash(&bytes[..expected - 4]) != stored_crc {
            return Err(Error::Corrupt("CRC-32 checksum mismatch".into()));
        }

        let read_tensors = |r: &mut Reader| -> Result<Vec<Matrix>> {
            layout
                .iter()
                .map(|(_, (rows, cols))| Matrix::from_vec(*rows, *cols, r.f64s(rows * cols)?))
                .collect()
        };
        let tensors = read_tensors(&mut r)?;
        let adam = match header.adam_step {
            Some(t) => Some(AdamState {
                m: read_tensors(&mut r)?,
                v: read_tensors(&mut r)?,
                t,
            }),
            None => None,
        };
        let loss_history = r.f64s(header.loss_history_len)?;
        let params = ModelParams::from_tensors(header.model, tensors)?;
        Ok(Checkpoint {
            params,
            normalizer: header.normalizer,
            train_config: header.train_config,
            epoch: header.epoch,
            rng: header.rng,
            loss_history,
            adam,
            provenance: header.provenance,
        })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.encode()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::decode(&bytes)
    }

    /// CRC-32 of the encoded checkpoint; identifies a base model in provenance records.
    pub fn fingerprint(&self) -> u32 {
        match self.encode() {
            Ok(bytes) => crc32fast::hash(&bytes),
            Err(_) => 0,
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Corrupt(format!(
                "truncated: needed {n} bytes at offset {}",
                self.pos
            ))),
        }
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
