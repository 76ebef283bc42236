//! Checkpoint files: magic, manifest length (u64 LE), JSON manifest, then
//! every parameter as little-endian f64 in manifest order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use qtensor::Tensor;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::Model;

pub const MAGIC: &[u8; 8] = b"QCKPT001";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub step: u64,
    pub model_hash: String,
    pub config: RunConfig,
    pub echo: serde_json::Value,
    pub params: Vec<ParamEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub values: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, config: &RunConfig, step: u64) -> Self {
        let mut params = Vec::with_capacity(model.store.len());
        let mut values = Vec::with_capacity(model.store.len());
        let mut offset = 0u64;
        for id in model.store.ids() {
            let t = model.store.get(id);
            params.push(ParamEntry {
                name: model.store.name(id).to_string(),
                shape: t.shape().to_vec(),
                offset,
                trainable: model.store.is_trainable(id),
            });
            offset += 8 * t.numel() as u64;
            values.push(t.clone());
        }
        Self {
            manifest: Manifest {
                step,
                model_hash: config.model_hash(),
                config: config.clone(),
                echo: config.echo(),
                params,
            },
            values,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = serde_json::to_vec(&self.manifest).expect("manifest serializes");
        let payload: usize = self.values.iter().map(|t| 8 * t.numel()).sum();
        let mut out = Vec::with_capacity(16 + manifest.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in &self.values {
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if len > body.len() {
            return Err(Error::Checkpoint("manifest extends past end of file".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&body[..len])
            .map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        let payload = &body[len..];
        let mut values = Vec::with_capacity(manifest.params.len());
        let mut expected = 0u64;
        for p in &manifest.params {
            if p.offset != expected {
                return Err(Error::Checkpoint(format!("parameter {} has offset {}, expected {expected}", p.name, p.offset)));
            }
            let n: usize = p.shape.iter().product();
            let start = p.offset as usize;
            let end = start + 8 * n;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!(
                    "payload too short for parameter {}: needs bytes {start}..{end}, payload has {}",
                    p.name,
                    payload.len()
                )));
            }
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            values.push(Tensor::new(p.shape.clone(), data)?);
            expected = end as u64;
        }
        if (expected as usize) != payload.len() {
            let last = manifest.params.last().map_or("<none>", |p| p.name.as_str());
            return Err(Error::Checkpoint(format!(
                "payload has {} bytes after the last parameter {last}",
                payload.len() - expected as usize
            )));
        }
        Ok(Self { manifest, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads the stored values into `model`, failing on any name or shape conflict.
    pub fn apply(&self, model: &mut Model) -> Result<()> {
        let entries = self
            .manifest
            .params
            .iter()
            .zip(&self.values)
            .map(|(p, t)| (p.name.clone(), t.clone()))
            .collect();
        model.store.load_values(entries)
    }

    /// Rebuilds the model described by the stored config and loads the values.
    pub fn to_model(&self) -> Result<Model> {
        let cfg = &self.manifest.config;
        let mut model = Model::new(&cfg.model, cfg.seed)?;
        self.apply(&mut model)?;
        Ok(model)
    }
}
