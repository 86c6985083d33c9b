//! Checkpoint container:
//!
//! ```text
//! "HLMBOTNP" | version: u32 LE | header_len: u64 LE | header (JSON)
//!            | weights: f32 LE, row-major, in header tensor order
//!            | sha256 of everything above (32 bytes)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::TensorSpec;
use super::{Normalization, TnpConfig, TnpModel, TrainingHistory};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HLMBOTNP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: TnpConfig,
    input_dims: usize,
    normalization: Normalization,
    history: TrainingHistory,
    tensors: Vec<TensorSpec>,
}

impl TnpModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            input_dims: self.input_dims,
            normalization: self.normalization.clone(),
            history: self.history.clone(),
            tensors: self.network.specs().to_vec(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + header.len() + 4 * self.params.len() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in &self.params {
            out.extend_from_slice(&(*p as f32).to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic or truncated)"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch (truncated or corrupt)"));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let header_end = 20usize.checked_add(header_len).filter(|e| *e <= body.len()).ok_or_else(|| bad("header overruns file"))?;
        let header: Header = serde_json::from_slice(&body[20..header_end]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let blob = &body[header_end..];
        let n: usize = header.tensors.iter().map(TensorSpec::len).sum();
        if blob.len() != 4 * n {
            return Err(Error::Checkpoint(format!("weight blob has {} bytes, expected {}", blob.len(), 4 * n)));
        }
        let params: Vec<f64> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let model = TnpModel::from_parts(header.config, header.input_dims, header.normalization, header.history, params)?;
        if model.network.specs() != header.tensors.as_slice() {
            return Err(bad("tensor layout does not match the configured architecture"));
        }
        Ok(model)
    }

    /// Hex SHA-256 of the serialized checkpoint; identifies a model in run records.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}

pub fn save_model(model: &TnpModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, model.to_bytes()?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<TnpModel> {
    let bytes = std::fs::read(path)?;
    TnpModel::from_bytes(&bytes)
}
