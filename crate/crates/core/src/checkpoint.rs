//! Per-epoch model snapshots.
//!
//! Layout (little-endian): magic `DLCK`, `u32` version, `u64` agent count
//! `N`, `u64` parameter count `M`, `u64` epoch, then `N` length-prefixed
//! parameter vectors.

use std::path::Path;

use thiserror::Error;

use crate::model::ParamVector;

const MAGIC: &[u8; 4] = b"DLCK";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: u64,
    pub models: Vec<ParamVector>,
}

pub fn encode(epoch: u64, models: &[ParamVector]) -> Vec<u8> {
    let m = models.first().map_or(0, ParamVector::len);
    let mut out = Vec::with_capacity(HEADER_LEN + models.len() * (8 + 8 * m));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(models.len() as u64).to_le_bytes());
    out.extend_from_slice(&(m as u64).to_le_bytes());
    out.extend_from_slice(&epoch.to_le_bytes());
    for w in models {
        w.write_to(&mut out);
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if bytes.len() < HEADER_LEN {
        return Err(CheckpointError::Malformed("short header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let (n, m, epoch) = (word(8) as usize, word(16) as usize, word(24));
    let mut offset = HEADER_LEN;
    let mut models = Vec::with_capacity(n.min(1 << 16));
    for k in 0..n {
        let (w, used) = ParamVector::read_from(&bytes[offset..])
            .map_err(|e| CheckpointError::Malformed(format!("model {k}: {e}")))?;
        if w.len() != m {
            return Err(CheckpointError::Malformed(format!(
                "model {k} has {} parameters, header says {m}",
                w.len()
            )));
        }
        offset += used;
        models.push(w);
    }
    if offset != bytes.len() {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    Ok(Checkpoint { epoch, models })
}

pub fn write(path: &Path, epoch: u64, models: &[ParamVector]) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(epoch, models))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Checkpoint, CheckpointError> {
    decode(&std::fs::read(path)?)
}
