//! Checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | magic `NRKCKPT\0` |
//! | 4     | format version (u32, currently 1) |
//! | 4     | header length `h` in bytes (u32) |
//! | h     | UTF-8 JSON header |
//! | ...   | f32 blocks, in the order listed by `header.blocks` |
//!
//! The header holds the step count, both network configurations (which
//! include the encoding frequencies), the log sharpness, the block table and
//! a free-form `extra` object used by the trainer. Blocks are `geometry`,
//! `radiance` and optionally `adam_m` / `adam_v`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GeometryField, Mlp, ModelConfig, RadianceField, SceneModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"NRKCKPT\0";
const VERSION: u32 = 1;

/// Adam moments for the network parameters and the sharpness scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub sharpness_m: f64,
    pub sharpness_v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub model: SceneModel<f32>,
    pub optimizer: Option<AdamState>,
    pub extra: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Block {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    step: u64,
    model: ModelConfig,
    feature_dim: usize,
    log_sharpness: f64,
    #[serde(default)]
    sharpness_m: f64,
    #[serde(default)]
    sharpness_v: f64,
    blocks: Vec<Block>,
    #[serde(default)]
    extra: serde_json::Value,
}

fn put_block(out: &mut Vec<u8>, data: &[f32]) {
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blocks = vec![
            Block {
                name: "geometry".into(),
                len: self.model.geometry.num_params(),
            },
            Block {
                name: "radiance".into(),
                len: self.model.radiance.num_params(),
            },
        ];
        if let Some(opt) = &self.optimizer {
            blocks.push(Block {
                name: "adam_m".into(),
                len: opt.m.len(),
            });
            blocks.push(Block {
                name: "adam_v".into(),
                len: opt.v.len(),
            });
        }
        let header = Header {
            step: self.step,
            model: self.model.config(),
            feature_dim: self.model.radiance.feature_dim,
            log_sharpness: self.model.geometry.log_sharpness,
            sharpness_m: self.optimizer.as_ref().map_or(0.0, |o| o.sharpness_m),
            sharpness_v: self.optimizer.as_ref().map_or(0.0, |o| o.sharpness_v),
            blocks,
            extra: self.extra.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        put_block(&mut out, self.model.geometry.mlp.params());
        put_block(&mut out, self.model.radiance.mlp.params());
        if let Some(opt) = &self.optimizer {
            put_block(&mut out, &opt.m);
            put_block(&mut out, &opt.v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let mut at = 16 + hlen;
        let mut take = |len: usize| -> Result<Vec<f32>> {
            let raw = bytes.get(at..at + len * 4).ok_or_else(|| bad("truncated parameter block"))?;
            at += len * 4;
            Ok(raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect())
        };
        let mut geometry = None;
        let mut radiance = None;
        let mut m = None;
        let mut v = None;
        for block in &header.blocks {
            let data = take(block.len)?;
            match block.name.as_str() {
                "geometry" => geometry = Some(data),
                "radiance" => radiance = Some(data),
                "adam_m" => m = Some(data),
                "adam_v" => v = Some(data),
                other => return Err(Error::Checkpoint(format!("unknown block {other}"))),
            }
        }
        let geo_shape = header.model.geometry.shape();
        let rad_shape = header.model.radiance.shape(header.feature_dim);
        let geometry = Mlp::from_params(geo_shape, geometry.ok_or_else(|| bad("missing geometry block"))?)
            .ok_or_else(|| bad("geometry block does not match its configuration"))?;
        let radiance = Mlp::from_params(rad_shape, radiance.ok_or_else(|| bad("missing radiance block"))?)
            .ok_or_else(|| bad("radiance block does not match its configuration"))?;
        let optimizer = match (m, v) {
            (Some(m), Some(v)) => Some(AdamState {
                m,
                v,
                sharpness_m: header.sharpness_m,
                sharpness_v: header.sharpness_v,
            }),
            (None, None) => None,
            _ => return Err(bad("incomplete optimizer state")),
        };
        Ok(Self {
            step: header.step,
            model: SceneModel {
                geometry: GeometryField {
                    config: header.model.geometry,
                    mlp: geometry,
                    log_sharpness: header.log_sharpness,
                },
                radiance: RadianceField {
                    config: header.model.radiance,
                    feature_dim: header.feature_dim,
                    mlp: radiance,
                },
            },
            optimizer,
            extra: header.extra,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{GeometryConfig, RadianceConfig};

    fn model() -> SceneModel<f32> {
        let config = ModelConfig {
            geometry: GeometryConfig {
                hidden_layers: 2,
                hidden_width: 8,
                feature_dim: 4,
                skip_layer: None,
                ..GeometryConfig::default()
            },
            radiance: RadianceConfig {
                hidden_layers: 2,
                hidden_width: 8,
                ..RadianceConfig::default()
            },
        };
        SceneModel::init(&config, 3)
    }

    #[test]
    fn round_trip() {
        let model = model();
        let n = model.num_params();
        let ckpt = Checkpoint {
            step: 1234,
            model,
            optimizer: Some(AdamState {
                m: (0..n).map(|i| i as f32 * 0.5).collect(),
                v: vec![0.25; n],
                sharpness_m: 0.125,
                sharpness_v: 3.0,
            }),
            extra: serde_json::json!({"seed": 7}),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(matches!(Checkpoint::from_bytes(b"hello world, not it"), Err(Error::Checkpoint(_))));
        let bytes = Checkpoint {
            step: 0,
            model: model(),
            optimizer: None,
            extra: serde_json::Value::Null,
        }
        .to_bytes();
        assert!(matches!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
    }
}
