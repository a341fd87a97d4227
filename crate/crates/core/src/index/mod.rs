//! Maximum inner-product search over passage vectors.
//!
//! [`FlatIndex`] answers exact top-k by scanning every row; [`HnswIndex`]
//! answers approximately through a hierarchical small-world graph that uses
//! the inner product as its similarity throughout. Both persist to the same
//! checksummed little-endian file format (see [`save_index`]).

mod flat;
mod hnsw;
mod persist;

use std::cmp::Ordering;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::PassageHandle;

pub use flat::FlatIndex;
pub use hnsw::{HnswIndex, HnswParams};
pub use persist::{load_index, save_index, write_atomic, INDEX_MAGIC, INDEX_VERSION};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot build an index from zero vectors")]
    Empty,
    #[error("row {row} contains a non-finite value")]
    NonFinite { row: usize },
    #[error("row {row} has length {got}, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        got: usize,
    },
    #[error("{ids} ids supplied for {rows} rows")]
    IdCount { rows: usize, ids: usize },
    #[error("query dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("ef_search ({ef}) must be at least k ({k})")]
    EfTooSmall { ef: usize, k: usize },
    #[error("invalid HNSW parameters: {0}")]
    InvalidParams(String),
    #[error("index file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("index format error: {0}")]
    Format(String),
    #[error("index file truncated")]
    Truncated,
    #[error("index checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    Checksum { stored: u64, computed: u64 },
}

/// One search result: a passage and its exact inner product with the query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Hit {
    pub handle: PassageHandle,
    pub score: f32,
}

/// Descending score, then ascending ordinal.
pub(crate) fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then(a.handle.cmp(&b.handle))
}

/// Common search surface for the two index kinds.
pub trait MipsIndex: Send + Sync {
    fn dimension(&self) -> usize;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Passage id stored for an ordinal.
    fn id(&self, handle: PassageHandle) -> Option<&str>;
    fn search(&self, query: &[f32], k: usize) -> Result<Vec<Hit>, IndexError>;
}

/// Either index kind, as loaded from disk.
#[derive(Debug, Clone, PartialEq)]
pub enum VectorIndex {
    Flat(FlatIndex),
    Hnsw(HnswIndex),
}

impl VectorIndex {
    pub fn kind(&self) -> &'static str {
        match self {
            VectorIndex::Flat(_) => "flat",
            VectorIndex::Hnsw(_) => "hnsw",
        }
    }

    pub fn flat(&self) -> &FlatIndex {
        match self {
            VectorIndex::Flat(f) => f,
            VectorIndex::Hnsw(h) => h.base(),
        }
    }
}

impl MipsIndex for VectorIndex {
    fn dimension(&self) -> usize {
        self.flat().dimension()
    }

    fn len(&self) -> usize {
        self.flat().len()
    }

    fn id(&self, handle: PassageHandle) -> Option<&str> {
        self.flat().id(handle)
    }

    fn search(&self, query: &[f32], k: usize) -> Result<Vec<Hit>, IndexError> {
        match self {
            VectorIndex::Flat(f) => f.search(query, k),
            VectorIndex::Hnsw(h) => h.search(query, k),
        }
    }
}
