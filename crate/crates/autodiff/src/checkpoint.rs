//! Parameter checkpoints: a little-endian `u32` header length, a JSON header,
//! then every parameter as little-endian `f64` in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stratlab_core::Real;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub tensors: Vec<TensorEntry>,
    pub seed: u64,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub optimizer: String,
    pub init: String,
    pub reduction: String,
    pub dtype: String,
}

pub const FORMAT: &str = "stratlab-params-v1";

/// Hex SHA-256 of the compact JSON encoding.
pub fn config_hash(config: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(config).expect("json values always serialise");
    hex::encode(Sha256::digest(bytes))
}

/// Training metadata stored alongside the parameters.
#[derive(Debug, Clone)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub config: serde_json::Value,
    pub optimizer: String,
    pub init: String,
    pub reduction: String,
}

pub fn write_checkpoint<T: Real, W: Write>(mut w: W, params: &ParamStore<T>, meta: &CheckpointMeta) -> Result<()> {
    let header = CheckpointHeader {
        format: FORMAT.into(),
        tensors: params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        seed: meta.seed,
        config_hash: config_hash(&meta.config),
        config: meta.config.clone(),
        optimizer: meta.optimizer.clone(),
        init: meta.init.clone(),
        reduction: meta.reduction.clone(),
        dtype: "f64-le".into(),
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::Checkpoint("header too large".into()))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    for (_, t) in params.iter() {
        for v in t.data() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Real, R: Read>(mut r: R) -> Result<(ParamStore<T>, CheckpointHeader)> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {}", header.format)));
    }
    if header.config_hash != config_hash(&header.config) {
        return Err(Error::Checkpoint("config hash does not match stored config".into()));
    }
    let mut params = ParamStore::new();
    let mut buf = [0u8; 8];
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint(format!("blob truncated in {}", entry.name)))?;
            data.push(T::lit(f64::from_le_bytes(buf)));
        }
        params.insert(entry.name.clone(), Tensor::new(&entry.shape, data)?)?;
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after parameter blob".into()));
    }
    Ok((params, header))
}

pub fn save_checkpoint<T: Real>(path: impl AsRef<Path>, params: &ParamStore<T>, meta: &CheckpointMeta) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), params, meta)
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<(ParamStore<T>, CheckpointHeader)> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
