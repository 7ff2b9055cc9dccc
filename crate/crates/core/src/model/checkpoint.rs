//! Parameter checkpoints: an 8-byte little-endian header length, a JSON
//! header (config + tensor names/shapes), then every tensor as little-endian
//! f32 in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encoder::ModelState;
use super::params::EncoderConfig;
use crate::error::{Error, Result};

const FORMAT: &str = "drift-checkpoint-v1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    config: EncoderConfig,
    tensors: Vec<TensorInfo>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

pub fn to_bytes(state: &ModelState) -> Result<Vec<u8>> {
    let header = Header {
        format: FORMAT.into(),
        config: state.config.clone(),
        tensors: state
            .params
            .tensors
            .iter()
            .map(|t| TensorInfo {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + 4 * state.params.num_scalars());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in &state.params.tensors {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Rebuilds a model; optimizer moments start fresh.
pub fn from_bytes(bytes: &[u8]) -> Result<ModelState> {
    let err = |m: &str| Error::Checkpoint(m.to_string());
    let len_bytes: [u8; 8] = bytes
        .get(..8)
        .ok_or_else(|| err("truncated header length"))?
        .try_into()
        .unwrap();
    let hlen = u64::from_le_bytes(len_bytes) as usize;
    let json = bytes
        .get(8..8 + hlen)
        .ok_or_else(|| err("truncated header"))?;
    let header: Header = serde_json::from_slice(json)?;
    if header.format != FORMAT {
        return Err(Error::Checkpoint(format!(
            "unknown format `{}`",
            header.format
        )));
    }
    let mut state = ModelState::new(header.config)?;
    if state.params.tensors.len() != header.tensors.len() {
        return Err(err("tensor count does not match config"));
    }
    let mut off = 8 + hlen;
    for (t, info) in state.params.tensors.iter_mut().zip(&header.tensors) {
        if t.name != info.name || t.shape != info.shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` does not match config",
                info.name
            )));
        }
        let n = t.data.len() * 4;
        let raw = bytes
            .get(off..off + n)
            .ok_or_else(|| err("truncated tensor data"))?;
        for (dst, chunk) in t.data.iter_mut().zip(raw.chunks_exact(4)) {
            *dst = f32::from_le_bytes(chunk.try_into().unwrap());
        }
        off += n;
    }
    if off != bytes.len() {
        return Err(err("trailing bytes after tensor data"));
    }
    Ok(state)
}

pub fn save(state: &ModelState, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(state)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelState> {
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
