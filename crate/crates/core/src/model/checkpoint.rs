//! Checkpoint layout: `manifest.json` describing every tensor (name, shape,
//! dtype, offset) and `tensors.bin`, the tensors as little-endian f32 back to
//! back in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, Vae};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};

pub const CHECKPOINT_FORMAT: &str = "rse-checkpoint";
const VERSION: u32 = 1;
const ARCHITECTURE: &str = "yuv3-vae-v1";
const MANIFEST: &str = "manifest.json";
const BLOB: &str = "tensors.bin";

/// Root seed plus the number of training steps drawn from it; every stream
/// is a pure function of these two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub root_seed: u64,
    pub counter: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Offset in elements from the start of the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    architecture: String,
    model: ModelConfig,
    config: serde_json::Value,
    config_hash: String,
    step: u64,
    rng: RngState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    adam: Option<AdamHeader>,
    tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rl_meta: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct AdamHeader {
    config: AdamConfig,
    t: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: Vae,
    pub adam: Option<Adam>,
    pub step: u64,
    pub rng: RngState,
    /// Run configuration the checkpoint was produced with.
    pub config: serde_json::Value,
    pub rl_meta: Option<serde_json::Value>,
}

impl ModelCheckpoint {
    pub fn new(model: Vae, seed: u64) -> Self {
        Self {
            model,
            adam: None,
            step: 0,
            rng: RngState {
                root_seed: seed,
                counter: 0,
            },
            config: serde_json::Value::Null,
            rl_meta: None,
        }
    }

    pub fn config_hash(&self) -> String {
        let bytes = serde_json::to_vec(&(&self.model.config, &self.config)).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    fn named_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = self
            .model
            .param_specs()
            .into_iter()
            .zip(self.model.params())
            .map(|((n, s), p)| (n, s, p.as_slice()))
            .collect();
        if let Some(adam) = &self.adam {
            let specs = self.model.param_specs();
            for (prefix, moments) in [("adam.m", &adam.m), ("adam.v", &adam.v)] {
                for ((name, shape), m) in specs.iter().zip(moments) {
                    out.push((format!("{prefix}.{name}"), shape.clone(), m.as_slice()));
                }
            }
        }
        out
    }

    /// Serialized `(manifest JSON, tensor blob)`.
    pub fn to_bytes(&self) -> Result<(String, Vec<u8>)> {
        let mut tensors = Vec::new();
        let mut blob = Vec::new();
        let mut offset = 0;
        for (name, shape, values) in self.named_tensors() {
            for v in values {
                blob.extend_from_slice(&(*v as f32).to_le_bytes());
            }
            tensors.push(TensorEntry {
                name,
                shape,
                dtype: "f32".into(),
                offset,
            });
            offset += values.len();
        }
        let manifest = Manifest {
            format: CHECKPOINT_FORMAT.into(),
            version: VERSION,
            architecture: ARCHITECTURE.into(),
            model: self.model.config,
            config: self.config.clone(),
            config_hash: self.config_hash(),
            step: self.step,
            rng: self.rng,
            adam: self.adam.as_ref().map(|a| AdamHeader {
                config: a.config,
                t: a.t,
            }),
            tensors,
            rl_meta: self.rl_meta.clone(),
        };
        Ok((serde_json::to_string_pretty(&manifest)?, blob))
    }

    pub fn from_bytes(manifest: &str, blob: &[u8]) -> Result<Self> {
        let m: Manifest = serde_json::from_str(manifest)?;
        if m.format != CHECKPOINT_FORMAT || m.version != VERSION || m.architecture != ARCHITECTURE {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{} ({})",
                m.format, m.version, m.architecture
            )));
        }
        if !blob.len().is_multiple_of(4) {
            return Err(Error::Checkpoint("tensor blob is not a whole number of f32s".into()));
        }
        let values: Vec<f64> = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        let lookup = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let e = m
                .tensors
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if e.shape != shape || e.dtype != "f32" {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: expected f32 {shape:?}, found {} {:?}",
                    e.dtype, e.shape
                )));
            }
            let len: usize = shape.iter().product();
            values
                .get(e.offset..e.offset + len)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name} runs past the blob")))
        };

        let mut model = Vae::zeroed(m.model)?;
        let specs = model.param_specs();
        for ((name, shape), p) in specs.iter().zip(model.params_mut()) {
            *p = lookup(name, shape)?;
        }
        let adam = match m.adam {
            Some(h) => {
                let mut adam = Adam::for_params(h.config, &model.params());
                adam.t = h.t;
                for (i, (name, shape)) in specs.iter().enumerate() {
                    adam.m[i] = lookup(&format!("adam.m.{name}"), shape)?;
                    adam.v[i] = lookup(&format!("adam.v.{name}"), shape)?;
                }
                Some(adam)
            }
            None => None,
        };
        let ckpt = Self {
            model,
            adam,
            step: m.step,
            rng: m.rng,
            config: m.config,
            rl_meta: m.rl_meta,
        };
        if ckpt.config_hash() != m.config_hash {
            return Err(Error::Checkpoint("config hash does not match manifest".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (manifest, blob) = self.to_bytes()?;
        let mp = dir.join(MANIFEST);
        fs::write(&mp, manifest).map_err(|e| Error::io(&mp, e))?;
        let bp = dir.join(BLOB);
        fs::write(&bp, blob).map_err(|e| Error::io(&bp, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mp = dir.join(MANIFEST);
        let manifest = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
        let bp = dir.join(BLOB);
        let blob = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
        Self::from_bytes(&manifest, &blob)
    }
}
