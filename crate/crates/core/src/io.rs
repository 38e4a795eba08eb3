//! "ESIT" tensor files and small JSON helpers.
//!
//! Layout: magic `ESIT`, version byte (1), rank byte, `rank` little-endian
//! `u32` dims, then the payload as little-endian `f32` in row-major order.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{EsiError, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ESIT";
pub const VERSION: u8 = 1;

pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    if t.rank() > u8::MAX as usize {
        return Err(EsiError::Format(format!("rank {} too large", t.rank())));
    }
    let mut buf = Vec::with_capacity(6 + 4 * t.rank() + 4 * t.len());
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(t.rank() as u8);
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| EsiError::Format(format!("dim {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(buf)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(EsiError::Format("bad magic, expected ESIT".into()));
    }
    if bytes[4] != VERSION {
        return Err(EsiError::Format(format!(
            "unsupported format version {}",
            bytes[4]
        )));
    }
    let rank = bytes[5] as usize;
    let header = 6 + 4 * rank;
    if bytes.len() < header {
        return Err(EsiError::Format("truncated header".into()));
    }
    let dims: Vec<usize> = bytes[6..header]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() != 4 * count {
        return Err(EsiError::Format(format!(
            "truncated payload: header {:?} needs {} values, file holds {} bytes",
            dims,
            count,
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::from_vec(&dims, data)
}

pub fn save_tensor(t: &Tensor, path: &Path) -> Result<()> {
    let bytes = encode_tensor(t)?;
    fs::write(path, bytes).map_err(|e| EsiError::io(path, e))
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| EsiError::io(path, e))?;
    decode_tensor(&bytes)
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| EsiError::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| EsiError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| EsiError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| EsiError::json(path, e))
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| EsiError::io(path, e))
}
