//! Binary checkpoint container.
//!
//! Layout: the magic line `STCK1\n`, a little-endian `u64` header length,
//! a JSON header (config, step, seed, array names and shapes), then every
//! array's values as little-endian `f64` in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::io::write_atomic;
use super::{HarnessError, Result};
use crate::model::{ModelConfig, NowcastModel, Params};
use crate::Tensor;

const MAGIC: &[u8] = b"STCK1\n";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: NowcastModel,
    /// Optimizer steps taken when saved.
    pub step: u64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    step: u64,
    seed: u64,
    arrays: Vec<ArrayEntry>,
}

fn corrupt(detail: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint(detail.into())
}

impl Checkpoint {
    pub fn new(model: NowcastModel, step: u64, seed: u64) -> Self {
        Checkpoint { model, step, seed }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.model.config.clone(),
            step: self.step,
            seed: self.seed,
            arrays: self
                .model
                .params
                .iter()
                .map(|(n, t)| ArrayEntry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in self.model.params.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let rest = bytes
            .strip_prefix(MAGIC)
            .ok_or_else(|| corrupt("missing STCK1 magic"))?;
        if rest.len() < 8 {
            return Err(corrupt("truncated header length"));
        }
        let len = u64::from_le_bytes(rest[..8].try_into().unwrap()) as usize;
        let rest = &rest[8..];
        if rest.len() < len {
            return Err(corrupt("truncated header"));
        }
        let header: Header = serde_json::from_slice(&rest[..len]).map_err(|e| corrupt(e.to_string()))?;
        let mut body = &rest[len..];
        let mut params = Params::new();
        for a in header.arrays {
            let n: usize = a.shape.iter().product();
            if body.len() < 8 * n {
                return Err(corrupt(format!("array `{}` is truncated", a.name)));
            }
            let data = body[..8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            body = &body[8 * n..];
            let t = Tensor::new(a.shape, data).map_err(|e| corrupt(e.to_string()))?;
            params.insert(a.name, t);
        }
        if !body.is_empty() {
            return Err(corrupt(format!("{} trailing bytes", body.len())));
        }
        let expected = NowcastModel::init(header.config.clone(), 0)?;
        for (name, t) in &expected.params {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(corrupt(format!(
                        "array `{name}` has shape {:?}, config implies {:?}",
                        p.shape(),
                        t.shape()
                    )))
                }
                None => return Err(corrupt(format!("array `{name}` missing"))),
            }
        }
        if params.len() != expected.params.len() {
            return Err(corrupt("unexpected extra arrays"));
        }
        Ok(Checkpoint {
            model: NowcastModel {
                config: header.config,
                params,
            },
            step: header.step,
            seed: header.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::MissingInput {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_bytes(&bytes)
    }
}
