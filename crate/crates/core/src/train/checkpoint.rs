//! `BST1` checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "BST1" | u32 version | u64 json_len | json
//! u64 count | count × (u16 name_len | name | u32 rank | rank × u64 dim | f32 data)
//! [optimizer section, same tensor layout]
//! ```
//!
//! Tensor data is stored as `f32`, so a checkpoint holds parameters
//! rounded to single precision.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::{Accumulators, AdadeltaConfig, OptimizerState};
use crate::autodiff::Tensor;
use crate::data::PixelStats;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Parameters};

pub const MAGIC: &[u8; 4] = b"BST1";
pub const FORMAT_VERSION: u32 = 1;

const SQUARE_GRAD: &str = "#square_grad";
const SQUARE_DELTA: &str = "#square_delta";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerMeta {
    pub config: AdadeltaConfig,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub iteration: u64,
    /// Normalization the model was trained with.
    pub stats: Option<PixelStats>,
    pub optimizer: Option<OptimizerMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    fn new(name: impl Into<String>, shape: &[usize], data: &[f64]) -> Self {
        NamedTensor {
            name: name.into(),
            shape: shape.to_vec(),
            data: data.iter().map(|&v| v as f32).collect(),
        }
    }

    fn widened(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub meta: CheckpointMeta,
    /// Sorted by name.
    pub tensors: Vec<NamedTensor>,
    pub optimizer: Option<Vec<NamedTensor>>,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        iteration: u64,
        stats: Option<PixelStats>,
        state: Option<&OptimizerState>,
    ) -> Self {
        let tensors = model
            .params()
            .iter()
            .map(|(name, t)| NamedTensor::new(name, t.shape(), t.data()))
            .collect();
        let optimizer = state.map(|s| {
            let mut out = Vec::with_capacity(2 * s.slots.len());
            for (name, acc) in &s.slots {
                let n = acc.square_grad.len();
                out.push(NamedTensor::new(format!("{name}{SQUARE_DELTA}"), &[n], &acc.square_delta));
                out.push(NamedTensor::new(format!("{name}{SQUARE_GRAD}"), &[n], &acc.square_grad));
            }
            out.sort_by(|a, b| a.name.cmp(&b.name));
            out
        });
        Checkpoint {
            version: FORMAT_VERSION,
            meta: CheckpointMeta {
                model: model.config().clone(),
                iteration,
                stats,
                optimizer: state.map(|s| OptimizerMeta {
                    config: s.config,
                    steps: s.steps,
                }),
            },
            tensors,
            optimizer,
        }
    }

    /// Rebuilds the model; a missing, extra or misshapen tensor is an error
    /// naming it.
    pub fn to_model(&self) -> Result<Model> {
        let mut params = Parameters::new();
        for t in &self.tensors {
            params.insert(t.name.clone(), Tensor::param(&t.shape, t.widened())?);
        }
        Model::new(self.meta.model.clone(), params)
    }

    pub fn optimizer_state(&self) -> Result<Option<OptimizerState>> {
        let (Some(meta), Some(tensors)) = (&self.meta.optimizer, &self.optimizer) else {
            return Ok(None);
        };
        let mut slots: BTreeMap<String, Accumulators> = BTreeMap::new();
        for t in tensors {
            let (name, is_grad) = if let Some(n) = t.name.strip_suffix(SQUARE_GRAD) {
                (n, true)
            } else if let Some(n) = t.name.strip_suffix(SQUARE_DELTA) {
                (n, false)
            } else {
                return Err(Error::Load(format!("unknown optimizer tensor {}", t.name)));
            };
            let slot = slots.entry(name.to_string()).or_insert_with(|| Accumulators {
                square_grad: Vec::new(),
                square_delta: Vec::new(),
            });
            if is_grad {
                slot.square_grad = t.widened();
            } else {
                slot.square_delta = t.widened();
            }
        }
        if let Some((name, _)) = slots.iter().find(|(_, a)| a.square_grad.len() != a.square_delta.len()) {
            return Err(Error::Load(format!("incomplete optimizer state for {name}")));
        }
        Ok(Some(OptimizerState {
            config: meta.config,
            steps: meta.steps,
            slots,
        }))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.meta).map_err(|e| Error::Load(format!("config encoding: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        write_section(&mut out, &self.tensors)?;
        if let Some(opt) = &self.optimizer {
            write_section(&mut out, opt)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(r.error_at(0, "bad magic, not a BST1 checkpoint"));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(r.error_at(4, &format!("unsupported version {version}")));
        }
        let json_len = r.u64("config length")? as usize;
        let json_start = r.pos;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(json_len, "config")?)
            .map_err(|e| r.error_at(json_start as u64, &format!("invalid config: {e}")))?;
        let tensors = r.section()?;
        let optimizer = if r.pos < bytes.len() { Some(r.section()?) } else { None };
        if r.pos != bytes.len() {
            return Err(r.error("trailing bytes"));
        }
        if optimizer.is_some() != meta.optimizer.is_some() {
            return Err(r.error("optimizer section does not match the config"));
        }
        Ok(Checkpoint {
            version,
            meta,
            tensors,
            optimizer,
        })
    }
}

fn write_section(out: &mut Vec<u8>, tensors: &[NamedTensor]) -> Result<()> {
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Contract(format!("tensor name too long: {}", t.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: u64, message: &str) -> Error {
        Error::Checkpoint {
            offset,
            message: message.to_string(),
        }
    }

    fn error(&self, message: &str) -> Error {
        self.error_at(self.pos as u64, message)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.error(&format!("truncated while reading {what}")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn section(&mut self) -> Result<Vec<NamedTensor>> {
        let count = self.u64("tensor count")?;
        let mut out = Vec::new();
        for _ in 0..count {
            let start = self.pos as u64;
            let len = self.u16("name length")? as usize;
            let name = std::str::from_utf8(self.take(len, "tensor name")?)
                .map_err(|_| self.error_at(start, "tensor name is not UTF-8"))?
                .to_string();
            let rank = self.u32("rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(self.u64("dimension")? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| self.error_at(start, &format!("tensor {name} is too large")))?;
            let raw = self.take(n, &format!("data of {name}"))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            out.push(NamedTensor { name, shape, data });
        }
        Ok(out)
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let bytes = checkpoint.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
