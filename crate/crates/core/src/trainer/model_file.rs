//! Binary model file.
//!
//! Little-endian layout: magic "MDRMDL1\0", u32 version, u32 dimension,
//! u8 shared flag, u8 phase, f32 query weights (d×d row-major), f32 query
//! bias, then optionally a second f32 matrix and bias for the passage side,
//! and a trailing u64 FNV-1a checksum of every preceding byte.

use std::path::Path;

use super::TrainError;
use crate::encoder::{LinearEmbedder, LinearEncoder, DEFAULT_HASH_SEED, DEFAULT_MAX_QUERY_CHARS};
use crate::text::fnv1a64;

pub const MODEL_MAGIC: &[u8; 8] = b"MDRMDL1\0";
pub const MODEL_VERSION: u32 = 1;

fn push_f32s(buf: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_model(model: &LinearEncoder) -> Vec<u8> {
    let d = model.query.dimension();
    let mut buf = Vec::with_capacity(32 + 8 * d * (d + 1));
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.push(u8::from(model.shared));
    buf.push(model.phase);
    push_f32s(&mut buf, &model.query.weights_f32());
    push_f32s(&mut buf, &model.query.bias_f32());
    if let Some(p) = &model.passage {
        push_f32s(&mut buf, &p.weights_f32());
        push_f32s(&mut buf, &p.bias_f32());
    }
    let sum = fnv1a64(&buf);
    buf.extend_from_slice(&sum.to_le_bytes());
    buf
}

fn read_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

pub fn decode_model(bytes: &[u8]) -> Result<LinearEncoder, TrainError> {
    let fmt = |m: &str| TrainError::Format(m.to_string());
    if bytes.len() < 8 || &bytes[..8] != MODEL_MAGIC {
        return Err(fmt("bad magic, not a model file"));
    }
    if bytes.len() < 8 + 4 + 4 + 2 + 8 {
        return Err(fmt("file truncated"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(TrainError::Format(format!("unsupported model version {version}")));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = fnv1a64(payload);
    if stored != computed {
        return Err(TrainError::Checksum { stored, computed });
    }
    let d = u32::from_le_bytes(payload[12..16].try_into().unwrap()) as usize;
    let shared = match payload[16] {
        0 => false,
        1 => true,
        _ => return Err(fmt("shared flag must be 0 or 1")),
    };
    let phase = payload[17];
    if phase != 1 && phase != 2 {
        return Err(fmt("phase must be 1 or 2"));
    }
    let block = d
        .checked_mul(d)
        .and_then(|dd| dd.checked_add(d))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| fmt("dimension overflow"))?;
    let body = &payload[18..];
    let second = if body.len() == block {
        false
    } else if body.len() == 2 * block {
        true
    } else {
        return Err(TrainError::Format(format!(
            "body of {} bytes fits neither one nor two d={d} blocks",
            body.len()
        )));
    };
    let embedder = |chunk: &[u8]| {
        let w = read_f32s(&chunk[..4 * d * d]);
        let b = read_f32s(&chunk[4 * d * d..]);
        LinearEmbedder::from_f32(d, &w, &b)
    };
    let query = embedder(&body[..block])?;
    let passage = if second {
        Some(embedder(&body[block..])?)
    } else {
        None
    };
    Ok(LinearEncoder {
        query,
        passage,
        shared,
        phase,
        feature_seed: DEFAULT_HASH_SEED,
        max_query_chars: DEFAULT_MAX_QUERY_CHARS,
    })
}

pub fn save_model(model: &LinearEncoder, path: impl AsRef<Path>) -> Result<(), TrainError> {
    crate::index::write_atomic(path.as_ref(), &encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LinearEncoder, TrainError> {
    decode_model(&std::fs::read(path)?)
}
