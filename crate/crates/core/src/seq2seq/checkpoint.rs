//! Versioned checkpoint container.
//!
//! Layout: magic `M2SCKPT\0`, u32 LE version, u64 LE metadata length, UTF-8 JSON
//! metadata (configs, vocab, step, histories, tensor names and shapes), then
//! parameters, Adam first moments and Adam second moments as little-endian f64
//! in metadata order.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::model::Params;
use super::train::{AdamState, LossBreakdown, StepRecord};
use super::{Seq2SeqConfig, TrainConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"M2SCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seq2seq: Seq2SeqConfig,
    pub train: TrainConfig,
    pub step: usize,
    pub params: Params,
    pub adam: AdamState,
    pub loss_history: Vec<StepRecord>,
    pub val_history: Vec<(usize, LossBreakdown)>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    seq2seq: Seq2SeqConfig,
    train: TrainConfig,
    step: usize,
    adam_t: u64,
    tensors: Vec<(String, usize, usize)>,
    loss_history: Vec<StepRecord>,
    val_history: Vec<(usize, LossBreakdown)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = Meta {
            seq2seq: self.seq2seq.clone(),
            train: self.train.clone(),
            step: self.step,
            adam_t: self.adam.t,
            tensors: self
                .params
                .names
                .iter()
                .zip(&self.params.tensors)
                .map(|(n, t)| (n.clone(), t.nrows(), t.ncols()))
                .collect(),
            loss_history: self.loss_history.clone(),
            val_history: self.val_history.clone(),
        };
        let json = serde_json::to_vec(&meta).expect("metadata serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for group in [&self.params.tensors, &self.adam.m, &self.adam.v] {
            for t in group {
                for v in t.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fmt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(fmt(&format!("unsupported version {version}")));
        }
        let meta_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let meta_end =
            20usize.checked_add(meta_len).filter(|&e| e <= bytes.len()).ok_or_else(|| fmt("truncated metadata"))?;
        let meta: Meta = serde_json::from_slice(&bytes[20..meta_end]).map_err(|e| fmt(&e.to_string()))?;
        let mut pos = meta_end;
        let mut read_group = || -> Result<Vec<Array2<f64>>> {
            meta.tensors
                .iter()
                .map(|(_, r, c)| {
                    let n = r * c;
                    let end = pos + n * 8;
                    if end > bytes.len() {
                        return Err(fmt("truncated tensor payload"));
                    }
                    let vals: Vec<f64> =
                        bytes[pos..end].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect();
                    pos = end;
                    Array2::from_shape_vec((*r, *c), vals).map_err(|e| fmt(&e.to_string()))
                })
                .collect()
        };
        let tensors = read_group()?;
        let m = read_group()?;
        let v = read_group()?;
        if pos != bytes.len() {
            return Err(fmt("trailing bytes"));
        }
        let params = Params { names: meta.tensors.iter().map(|(n, _, _)| n.clone()).collect(), tensors };
        params.check_against(&meta.seq2seq)?;
        Ok(Checkpoint {
            seq2seq: meta.seq2seq,
            train: meta.train,
            step: meta.step,
            params,
            adam: AdamState { t: meta.adam_t, m, v },
            loss_history: meta.loss_history,
            val_history: meta.val_history,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
