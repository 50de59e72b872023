//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        6 bytes   "LPMII\0"
//! version      u32       currently 1
//! digest_len   u32       length of the config digest (32 for SHA-256)
//! digest       bytes     SHA-256 of the run's canonical config TOML
//! param_count  u32
//! per parameter, in canonical model order:
//!   name_len   u32
//!   name       UTF-8 bytes
//!   rank       u32
//!   dims       u64 × rank
//!   data       f64 × Π dims
//! ```
//!
//! The digest ties a checkpoint to the exact configuration that produced it;
//! loading verifies it when the caller supplies the expected value. The
//! architecture itself is not serialized — the caller provides the
//! `ModelConfig`, and every stored name/shape must match it exactly.

use crate::model::{ModelConfig, ModelError, ModelParams};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MAGIC: &[u8; 6] = b"LPMII\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("failed to read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("failed to write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint format version {0} (supported: {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("config digest mismatch: checkpoint was produced by a different configuration")]
    DigestMismatch,
    #[error("parameter mismatch: expected {expected}, checkpoint has {found}")]
    ParamMismatch { expected: String, found: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// SHA-256 of a config's canonical TOML serialization.
pub fn config_digest<T: serde::Serialize>(config: &T) -> [u8; 32] {
    let toml = toml::to_string(config).expect("config serializes");
    Sha256::digest(toml.as_bytes()).into()
}

/// Serialize parameters to checkpoint bytes.
pub fn to_bytes(params: &ModelParams, digest: &[u8; 32]) -> Vec<u8> {
    let named = params.named_tensors();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(digest.len() as u32).to_le_bytes());
    out.extend_from_slice(digest);
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, tensor) in named {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save(path: &Path, params: &ModelParams, digest: &[u8; 32]) -> Result<(), CheckpointError> {
    fs::write(path, to_bytes(params, digest)).map_err(|source| CheckpointError::Write {
        path: path.to_path_buf(),
        source,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "truncated while reading {what} ({n} bytes at offset {})",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parse checkpoint bytes into parameters for the given architecture.
pub fn from_bytes(
    bytes: &[u8],
    config: ModelConfig,
    expected_digest: Option<&[u8; 32]>,
) -> Result<ModelParams, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let digest_len = r.u32("digest length")? as usize;
    let digest = r.take(digest_len, "digest")?;
    if let Some(expected) = expected_digest {
        if digest != expected {
            return Err(CheckpointError::DigestMismatch);
        }
    }

    // Seed value is irrelevant; every tensor is overwritten below.
    let mut params = ModelParams::init(config, 0)?;
    let mut named = params.named_tensors_mut();
    let count = r.u32("parameter count")? as usize;
    if count != named.len() {
        return Err(CheckpointError::ParamMismatch {
            expected: format!("{} tensors", named.len()),
            found: format!("{count} tensors"),
        });
    }
    for (name, tensor) in named.iter_mut() {
        let name_len = r.u32("name length")? as usize;
        let stored = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| CheckpointError::Corrupt("non-UTF-8 parameter name".to_string()))?;
        if stored != name {
            return Err(CheckpointError::ParamMismatch {
                expected: name.clone(),
                found: stored.to_string(),
            });
        }
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64("dim")? as usize);
        }
        if dims != tensor.shape() {
            return Err(CheckpointError::ParamMismatch {
                expected: format!("{name} with shape {:?}", tensor.shape()),
                found: format!("{name} with shape {dims:?}"),
            });
        }
        let data = tensor.data_mut();
        let raw = r.take(data.len() * 8, "tensor data")?;
        for (i, chunk) in raw.chunks_exact(8).enumerate() {
            data[i] = f64::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes after last parameter",
            bytes.len() - r.pos
        )));
    }
    drop(named);
    Ok(params)
}

pub fn load(
    path: &Path,
    config: ModelConfig,
    expected_digest: Option<&[u8; 32]>,
) -> Result<ModelParams, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    from_bytes(&bytes, config, expected_digest)
}
