//! Little-endian bank checkpoint:
//!
//! ```text
//! "APPB" | u32 version=1 | u32 C | u32 J | u32 D
//! | f32 prototypes (C,J,D) | f32 head_weights (C,J) | f32 head_bias (C)
//! | u32 trailer_len | JSON trailer {class_names, metadata}
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PrototypeBank;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"APPB";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub class_names: Vec<String>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn encode_checkpoint(bank: &PrototypeBank, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let trailer = serde_json::to_vec(meta)?;
    let mut out = Vec::with_capacity(24 + 4 * (bank.prototypes.len() + bank.head_weights.len() * 2) + trailer.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    for v in [VERSION, bank.num_classes as u32, bank.per_class as u32, bank.dim as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in bank.prototypes.iter().chain(&bank.head_weights).chain(&bank.head_bias) {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.extend_from_slice(&(trailer.len() as u32).to_le_bytes());
    out.extend_from_slice(&trailer);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(PrototypeBank, CheckpointMeta)> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { expected: "APPB" });
    }
    let mut pos: usize = 4;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Truncated(what.to_string()))?;
        let s = &bytes[pos..end];
        pos = end;
        Ok(s)
    };
    let mut header = [0u32; 4];
    for h in &mut header {
        *h = u32::from_le_bytes(take(4, "header")?.try_into().unwrap());
    }
    let [version, c, j, d] = header.map(|v| v as usize);
    if version as u32 != VERSION {
        return Err(Error::BadVersion(version as u32));
    }
    let cj = c
        .checked_mul(j)
        .ok_or_else(|| Error::DimensionOverflow(format!("{c}x{j}")))?;
    let cjd = cj
        .checked_mul(d)
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(|| Error::DimensionOverflow(format!("{c}x{j}x{d}")))?;
    let mut floats = |n: usize, what: &str| -> Result<Vec<f64>> {
        let raw = take(n.checked_mul(4).ok_or_else(|| Error::DimensionOverflow(what.into()))?, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect())
    };
    let prototypes = floats(cjd, "prototypes")?;
    let head_weights = floats(cj, "head weights")?;
    let head_bias = floats(c, "head bias")?;
    let len = u32::from_le_bytes(take(4, "trailer length")?.try_into().unwrap()) as usize;
    let meta: CheckpointMeta = serde_json::from_slice(take(len, "trailer")?)?;
    let bank = PrototypeBank::new(prototypes, head_weights, head_bias, c, j, d)?;
    Ok((bank, meta))
}

pub fn save_checkpoint(path: impl AsRef<Path>, bank: &PrototypeBank, meta: &CheckpointMeta) -> Result<()> {
    let bytes = encode_checkpoint(bank, meta)?;
    fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path.as_ref(), e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(PrototypeBank, CheckpointMeta)> {
    let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    decode_checkpoint(&bytes)
}
