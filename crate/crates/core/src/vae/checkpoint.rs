//! Single-file checkpoints: `TVCK`, u32 manifest length, JSON manifest, then
//! the raw little-endian weights.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TVCK";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "float64";

/// Optimizer schedule state stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleState {
    /// Optimizer steps taken; the KL weight of the next step is derived from it.
    pub global_batch: u64,
    pub epochs_run: usize,
    /// Epoch whose weights were kept (1-based), 0 before any training.
    pub best_epoch: usize,
    pub trained: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    dtype: String,
    offset: usize,
    len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    id: String,
    config: ModelConfig,
    schedule: ScheduleState,
    tensors: Vec<TensorEntry>,
    blob_len: usize,
    blob_sha256: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub schedule: ScheduleState,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn blob(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.num_weights() * 8);
    for t in &params.tensors {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Content identifier: a hash prefix over the configuration and weights.
pub fn checkpoint_id(params: &ModelParams) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(&params.config).expect("config serializes"));
    h.update(blob(params));
    hex(&h.finalize())[..16].to_string()
}

impl Checkpoint {
    pub fn id(&self) -> String {
        checkpoint_id(&self.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let data = blob(&self.params);
        let mut offset = 0;
        let tensors = self
            .params
            .names()
            .zip(&self.params.tensors)
            .map(|(name, t)| {
                let len = t.len() * 8;
                let e = TensorEntry { name: name.into(), shape: [t.nrows(), t.ncols()], dtype: DTYPE.into(), offset, len };
                offset += len;
                e
            })
            .collect();
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            id: self.id(),
            config: self.params.config.clone(),
            schedule: self.schedule.clone(),
            tensors,
            blob_len: data.len(),
            blob_sha256: hex(&Sha256::digest(&data)),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(8 + json.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&data);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let integrity = |m: &str| Error::Integrity(m.to_string());
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(integrity("not a checkpoint file (bad magic)"));
        }
        let mlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
        let json = bytes.get(8..8 + mlen).ok_or_else(|| integrity("truncated manifest"))?;
        let manifest: Manifest = serde_json::from_slice(json).map_err(|e| integrity(&format!("bad manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedFormat(format!(
                "checkpoint format version {} (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let data = &bytes[8 + mlen..];
        if data.len() != manifest.blob_len {
            return Err(integrity(&format!("weight blob has {} bytes, manifest says {}", data.len(), manifest.blob_len)));
        }
        if hex(&Sha256::digest(data)) != manifest.blob_sha256 {
            return Err(integrity("weight blob checksum mismatch"));
        }
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            if e.dtype != DTYPE {
                return Err(Error::UnsupportedFormat(format!("tensor {} has dtype {}", e.name, e.dtype)));
            }
            let [r, c] = e.shape;
            if e.len != r * c * 8 {
                return Err(integrity(&format!("tensor {} length disagrees with its shape", e.name)));
            }
            let raw = data.get(e.offset..e.offset + e.len).ok_or_else(|| integrity(&format!("tensor {} out of bounds", e.name)))?;
            let values: Vec<f64> = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
            let t = Array2::from_shape_vec((r, c), values).expect("length checked");
            tensors.push((e.name.clone(), t));
        }
        manifest.config.validate()?;
        let params = ModelParams::from_tensors(&manifest.config, tensors)?;
        let ck = Checkpoint { params, schedule: manifest.schedule };
        if ck.id() != manifest.id {
            return Err(integrity("checkpoint id does not match its contents"));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Loads and checks that the stored architecture matches `expected`.
    pub fn load_for(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        let got = &ck.params.config;
        let mut diff = Vec::new();
        for (name, a, b) in [
            ("latent_dim", got.latent_dim, expected.latent_dim),
            ("hidden", got.hidden, expected.hidden),
            ("gru_layers", got.gru_layers, expected.gru_layers),
            ("head_hidden", got.head_hidden, expected.head_hidden),
        ] {
            if a != b {
                diff.push(format!("{name}: checkpoint {a}, expected {b}"));
            }
        }
        if diff.is_empty() {
            Ok(ck)
        } else {
            Err(Error::ShapeMismatch(diff.join("; ")))
        }
    }
}
