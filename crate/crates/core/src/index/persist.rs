//! Binary index file.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "MDRIDX1\0" | u32 version | u8 kind (0 flat, 1 hnsw) | u32 dimension | u64 count
//! f32 vectors, row-major
//! count × (u32 byte length, UTF-8 id)
//! hnsw only: u32 m_links | u32 ef_construction | u64 entry_point | u32 max_level
//!            count × (u8 level, (level+1) × (u32 n, n × u64 neighbor))
//! u64 FNV-1a of every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{FlatIndex, HnswIndex, HnswParams, IndexError, MipsIndex, VectorIndex};
use crate::text::fnv1a64;

pub const INDEX_MAGIC: &[u8; 8] = b"MDRIDX1\0";
pub const INDEX_VERSION: u32 = 1;

const KIND_FLAT: u8 = 0;
const KIND_HNSW: u8 = 1;

pub(crate) fn encode_index(index: &VectorIndex) -> Vec<u8> {
    let flat = index.flat();
    let mut buf = Vec::with_capacity(32 + flat.data().len() * 4);
    buf.extend_from_slice(INDEX_MAGIC);
    buf.extend_from_slice(&INDEX_VERSION.to_le_bytes());
    buf.push(match index {
        VectorIndex::Flat(_) => KIND_FLAT,
        VectorIndex::Hnsw(_) => KIND_HNSW,
    });
    buf.extend_from_slice(&(flat.dimension() as u32).to_le_bytes());
    buf.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in flat.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for id in flat.ids() {
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
    }
    if let VectorIndex::Hnsw(h) = index {
        let p = h.params();
        buf.extend_from_slice(&(p.m_links as u32).to_le_bytes());
        buf.extend_from_slice(&(p.ef_construction as u32).to_le_bytes());
        buf.extend_from_slice(&(h.entry_point() as u64).to_le_bytes());
        buf.extend_from_slice(&(h.max_level() as u32).to_le_bytes());
        for node in 0..h.len() {
            let level = h.node_level(node);
            buf.push(level as u8);
            for l in 0..=level {
                let nbs = h.neighbors(node, l);
                buf.extend_from_slice(&(nbs.len() as u32).to_le_bytes());
                for &nb in nbs {
                    buf.extend_from_slice(&u64::from(nb).to_le_bytes());
                }
            }
        }
    }
    let checksum = fnv1a64(&buf);
    buf.extend_from_slice(&checksum.to_le_bytes());
    buf
}

/// Writes atomically: a temporary file in the target directory is renamed into place.
pub fn save_index(index: &VectorIndex, path: impl AsRef<Path>) -> Result<(), IndexError> {
    write_atomic(path.as_ref(), &encode_index(index))?;
    Ok(())
}

/// Writes `bytes` to a temporary file beside `path`, syncs it, and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self.pos.checked_add(n).ok_or(IndexError::Truncated)?;
        let out = self.buf.get(self.pos..end).ok_or(IndexError::Truncated)?;
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, IndexError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub(crate) fn decode_index(bytes: &[u8]) -> Result<VectorIndex, IndexError> {
    if bytes.len() < INDEX_MAGIC.len() {
        return Err(IndexError::Truncated);
    }
    if &bytes[..8] != INDEX_MAGIC {
        return Err(IndexError::Format("bad magic, not an index file".into()));
    }
    if bytes.len() < 12 + 8 {
        return Err(IndexError::Truncated);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != INDEX_VERSION {
        return Err(IndexError::Format(format!(
            "unsupported version {version} (expected {INDEX_VERSION})"
        )));
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let computed = fnv1a64(payload);
    if stored != computed {
        return Err(IndexError::Checksum { stored, computed });
    }

    let mut cur = Cursor { buf: payload, pos: 12 };
    let kind = cur.u8()?;
    let dimension = cur.u32()? as usize;
    let count = cur.u64()? as usize;
    if dimension == 0 || count == 0 {
        return Err(IndexError::Format("zero dimension or count".into()));
    }
    let floats = count.checked_mul(dimension).ok_or(IndexError::Truncated)?;
    let raw = cur.take(floats.checked_mul(4).ok_or(IndexError::Truncated)?)?;
    let data: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let id = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| IndexError::Format("id is not UTF-8".into()))?;
        ids.push(id.to_string());
    }
    let flat = FlatIndex::from_parts(dimension, data, ids)?;
    let index = match kind {
        KIND_FLAT => VectorIndex::Flat(flat),
        KIND_HNSW => {
            let m_links = cur.u32()? as usize;
            let ef_construction = cur.u32()? as usize;
            let entry_point = cur.u64()?;
            let max_level = cur.u32()? as usize;
            let mut links = Vec::with_capacity(count);
            for _ in 0..count {
                let level = cur.u8()? as usize;
                let mut per_level = Vec::with_capacity(level + 1);
                for _ in 0..=level {
                    let n = cur.u32()? as usize;
                    let mut nbs = Vec::with_capacity(n.min(1024));
                    for _ in 0..n {
                        let nb = cur.u64()?;
                        nbs.push(u32::try_from(nb).map_err(|_| {
                            IndexError::Format("neighbor id out of range".into())
                        })?);
                    }
                    per_level.push(nbs);
                }
                links.push(per_level);
            }
            let params = HnswParams {
                m_links,
                ef_construction,
                ..HnswParams::default()
            };
            let entry = u32::try_from(entry_point)
                .map_err(|_| IndexError::Format("entry point out of range".into()))?;
            VectorIndex::Hnsw(HnswIndex::from_parts(flat, params, links, entry, max_level)?)
        }
        other => return Err(IndexError::Format(format!("unknown index kind {other}"))),
    };
    if cur.pos != payload.len() {
        return Err(IndexError::Format("trailing bytes after index payload".into()));
    }
    Ok(index)
}

pub fn load_index(path: impl AsRef<Path>) -> Result<VectorIndex, IndexError> {
    decode_index(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::MipsIndex;

    fn small_flat() -> VectorIndex {
        VectorIndex::Flat(
            FlatIndex::build(
                &[vec![1.0, 2.0], vec![-0.5, 0.25], vec![3.0, 0.0]],
                vec!["a".into(), "bé".into(), "c".into()],
            )
            .unwrap(),
        )
    }

    #[test]
    fn flat_layout_matches_documented_header() {
        let bytes = encode_index(&small_flat());
        assert_eq!(&bytes[..8], b"MDRIDX1\0");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(bytes[12], 0);
        assert_eq!(u32::from_le_bytes(bytes[13..17].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[17..25].try_into().unwrap()), 3);
        assert_eq!(f32::from_le_bytes(bytes[25..29].try_into().unwrap()), 1.0);
        // 3 rows × 2 floats, then ids: 4+1, 4+3, 4+1, then checksum.
        assert_eq!(bytes.len(), 25 + 24 + 5 + 7 + 5 + 8);
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        assert_eq!(stored, fnv1a64(&bytes[..bytes.len() - 8]));
    }

    #[test]
    fn round_trip_flat_and_hnsw() {
        let flat = small_flat();
        assert_eq!(decode_index(&encode_index(&flat)).unwrap(), flat);
        let h = HnswIndex::build(flat.flat().clone(), HnswParams::default()).unwrap();
        let hnsw = VectorIndex::Hnsw(h);
        let back = decode_index(&encode_index(&hnsw)).unwrap();
        assert_eq!(back, hnsw);
        assert_eq!(back.search(&[1.0, 1.0], 2).unwrap(), hnsw.search(&[1.0, 1.0], 2).unwrap());
    }

    #[test]
    fn corrupt_payload_byte_fails_checksum() {
        let mut bytes = encode_index(&small_flat());
        bytes[30] ^= 0x01;
        assert!(matches!(decode_index(&bytes), Err(IndexError::Checksum { .. })));
    }

    #[test]
    fn wrong_magic_and_version() {
        let mut bytes = encode_index(&small_flat());
        bytes[0] = b'X';
        assert!(matches!(decode_index(&bytes), Err(IndexError::Format(_))));
        let mut bytes = encode_index(&small_flat());
        bytes[8] = 2;
        assert!(matches!(decode_index(&bytes), Err(IndexError::Format(m)) if m.contains("version")));
    }

    #[test]
    fn truncated_file() {
        let bytes = encode_index(&small_flat());
        assert!(matches!(decode_index(&bytes[..5]), Err(IndexError::Truncated)));
        // Cutting the tail breaks the checksum before anything is parsed.
        assert!(decode_index(&bytes[..bytes.len() - 3]).is_err());
    }
}
