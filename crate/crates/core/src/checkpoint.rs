//! Binary checkpoint container.
//!
//! Layout: 8-byte magic, `u32` version, `u64` header length, JSON header,
//! little-endian `f64` payload (frozen projection, trainable tensors in
//! order, then optimizer moments if present), and a SHA-256 of everything
//! before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelWeights};
use crate::optim::{AdamW, AdamWConfig};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"IMGNAVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Training progress stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Epochs completed.
    pub epoch: usize,
    /// Optimizer steps taken.
    pub step: u64,
    /// Set on the last checkpoint of a run.
    pub is_final: bool,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    meta: CheckpointMeta,
    frozen_checksum: String,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    optimizer: Option<OptimizerHeader>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    config: AdamWConfig,
    step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub weights: ModelWeights,
    pub optimizer: Option<AdamW>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let w = &self.weights;
        let header = Header {
            config: w.config.clone(),
            meta: self.meta.clone(),
            frozen_checksum: w.frozen_checksum(),
            names: w.names.clone(),
            shapes: w.params.iter().map(|p| p.shape().to_vec()).collect(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerHeader {
                config: o.config,
                step: o.step,
            }),
        };
        let json = serde_json::to_vec(&header)
            .map_err(|e| Error::format("checkpoint header", e.to_string()))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |xs: &[f64]| {
            xs.iter()
                .for_each(|v| out.extend_from_slice(&v.to_le_bytes()))
        };
        put(w.frozen_projection.data());
        w.params.iter().for_each(|p| put(p.data()));
        if let Some(o) = &self.optimizer {
            o.m.iter().for_each(|m| put(m));
            o.v.iter().for_each(|v| put(v));
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::format("checkpoint", m);
        if bytes.len() < 8 + 4 + 8 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "version {version} unsupported (expected {CHECKPOINT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let json = body
            .get(20..20 + hlen)
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| bad(e.to_string()))?;
        header.config.validate()?;

        let payload = &body[20 + hlen..];
        if payload.len() % 8 != 0 {
            return Err(bad("payload is not a whole number of f64 values".into()));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = values.by_ref().take(n).collect();
            if v.len() == n {
                Ok(v)
            } else {
                Err(Error::format("checkpoint", "truncated payload"))
            }
        };

        let frozen_shape = vec![crate::env::Observation::LEN, header.config.obs_feature_dim];
        let frozen = Tensor::new(frozen_shape.clone(), take(frozen_shape.iter().product())?)?;
        let mut named = Vec::with_capacity(header.names.len());
        for (name, shape) in header.names.iter().zip(&header.shapes) {
            let t = Tensor::new(shape.clone(), take(shape.iter().product())?)?;
            named.push((name.clone(), t));
        }
        let weights = ModelWeights::from_parts(&header.config, frozen, named)?;
        if weights.frozen_checksum() != header.frozen_checksum {
            return Err(bad("frozen projection checksum mismatch".into()));
        }
        let optimizer = match header.optimizer {
            None => None,
            Some(o) => {
                let sizes: Vec<usize> = weights.params.iter().map(Tensor::numel).collect();
                let m = sizes.iter().map(|&n| take(n)).collect::<Result<Vec<_>>>()?;
                let v = sizes.iter().map(|&n| take(n)).collect::<Result<Vec<_>>>()?;
                Some(AdamW {
                    config: o.config,
                    step: o.step,
                    m,
                    v,
                })
            }
        };
        if values.next().is_some() {
            return Err(bad("trailing payload".into()));
        }
        Ok(Checkpoint {
            weights,
            optimizer,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(path.display().to_string(), message),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let weights = ModelWeights::init(&ModelConfig::tiny(), 3).unwrap();
        let mut opt = AdamW::new(AdamWConfig::default(), &weights.params);
        opt.step = 7;
        opt.m[0][0] = 0.5;
        Checkpoint {
            weights,
            optimizer: Some(opt),
            meta: CheckpointMeta {
                epoch: 2,
                step: 7,
                is_final: false,
            },
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = sample().to_bytes().unwrap();
        let n = bytes.len();
        bytes[n - 100] ^= 1;
        let err = Checkpoint::from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
    }
}
