//! Model file layout (all integers little-endian):
//!
//! ```text
//! magic "SQEV" | u32 format version | u32 header length | JSON header
//! | param_count × f32 | u32 CRC32 of every preceding byte
//! ```
//!
//! Only the architecture and parameters are stored; optimizer moments are not.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, Moments, RegressorState};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"SQEV";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    architecture: Architecture,
    param_count: usize,
    optimizer_steps: u64,
    toolkit_version: String,
}

pub fn to_bytes(state: &RegressorState) -> Vec<u8> {
    let header = Header {
        architecture: state.arch.clone(),
        param_count: state.params.len(),
        optimizer_steps: state.moments.step,
        toolkit_version: crate::VERSION.to_string(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * state.params.len());
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for &p in &state.params {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<RegressorState> {
    let bad = |msg: String| Error::ModelFormat(msg);
    if bytes.len() < 16 {
        return Err(bad(format!("file is truncated ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MODEL_MAGIC {
        return Err(bad("bad magic bytes; not a model file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != MODEL_FORMAT_VERSION {
        return Err(bad(format!(
            "unsupported format version {version} (this build reads version {MODEL_FORMAT_VERSION})"
        )));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(bad(format!(
            "checksum mismatch (stored {stored:08x}, computed {actual:08x}); file is truncated or corrupt"
        )));
    }
    let header_len = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
    let payload_at = 12usize
        .checked_add(header_len)
        .filter(|&end| end <= body.len())
        .ok_or_else(|| bad("header length exceeds file size".into()))?;
    let header: Header =
        serde_json::from_slice(&body[12..payload_at]).map_err(|e| bad(format!("invalid header: {e}")))?;
    header.architecture.validate()?;
    if header.param_count != header.architecture.param_count() {
        return Err(bad(format!(
            "header lists {} parameters but the architecture has {}",
            header.param_count,
            header.architecture.param_count()
        )));
    }
    let payload = &body[payload_at..];
    if payload.len() != 4 * header.param_count {
        return Err(bad(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            4 * header.param_count
        )));
    }
    let params: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let mut moments = Moments::zeros(params.len());
    moments.step = header.optimizer_steps;
    Ok(RegressorState {
        arch: header.architecture,
        params,
        moments,
    })
}

/// Writes `state` to `path`.
pub fn save(state: &RegressorState, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(state)).map_err(|e| Error::io(path, e))
}

/// Reads a model written by [`save`].
pub fn load(path: &Path) -> Result<RegressorState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
