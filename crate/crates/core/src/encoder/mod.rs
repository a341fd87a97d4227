//! Query and passage encoders.
//!
//! Every encoder maps rendered text to a fixed-dimension [`DenseVector`]. Queries
//! at hop `t` are reformulated by concatenating the question with the passages
//! retrieved so far (see [`render_query`]); passages are rendered as
//! `title [SEP] text`. Scoring is always the raw inner product of the two.

mod hashed;
mod linear;
mod remote;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Passage;

pub use hashed::{hashed_embed, hashed_features, HashedEncoder, DEFAULT_HASH_SEED};
pub use linear::{
    layer_norm, layer_norm_backward, linear_embed, LayerNormStats, LinearEmbedder, LinearEncoder,
    LinearForward, LinearGrad,
};
pub use remote::{EncodeRequest, EncodeResponse, RemoteEncoder, RemoteOptions};

pub const SEPARATOR: &str = " [SEP] ";

/// Appendix-style limit of 350 query tokens at roughly 8 characters per token.
pub const DEFAULT_MAX_QUERY_CHARS: usize = 2800;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("dimension must be at least 2, got {0}")]
    InvalidDimension(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced while encoding")]
    NonFinite,
    #[error("remote encoder at {url} unreachable: {message}")]
    Unreachable { url: String, message: String },
    #[error("remote encoder protocol error: {0}")]
    Protocol(String),
    #[error("remote encoder returned dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A fixed-length vector of finite `f32` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector(Vec<f32>);

impl DenseVector {
    /// Wraps `values`, rejecting NaN or infinite entries.
    pub fn new(values: Vec<f32>) -> Result<Self, EncoderError> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(DenseVector(values))
        } else {
            Err(EncoderError::NonFinite)
        }
    }

    pub(crate) fn from_f64(values: &[f64]) -> Result<Self, EncoderError> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn zeros(dimension: usize) -> Self {
        DenseVector(vec![0.0; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f32> {
        self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn dot(&self, other: &DenseVector) -> f32 {
        dot(&self.0, &other.0)
    }
}

/// Inner product summed left to right in `f32`.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// The question plus every passage retrieved at earlier hops.
#[derive(Debug, Clone, Copy)]
pub struct QueryInput<'a> {
    pub question: &'a str,
    pub prior_passages: &'a [&'a Passage],
}

impl<'a> QueryInput<'a> {
    pub fn new(question: &'a str, prior_passages: &'a [&'a Passage]) -> Self {
        QueryInput {
            question,
            prior_passages,
        }
    }
}

/// Rendered query text and whether it was cut at `max_chars`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedQuery {
    pub text: String,
    pub truncated: bool,
}

/// `question [SEP] title_1 [SEP] text_1 [SEP] ...`, cut to `max_chars` characters.
pub fn render_query(input: &QueryInput<'_>, max_chars: usize) -> RenderedQuery {
    let mut text = input.question.to_string();
    for p in input.prior_passages {
        text.push_str(SEPARATOR);
        text.push_str(&p.title);
        text.push_str(SEPARATOR);
        text.push_str(&p.text);
    }
    match text.char_indices().nth(max_chars) {
        Some((cut, _)) => {
            text.truncate(cut);
            RenderedQuery {
                text,
                truncated: true,
            }
        }
        None => RenderedQuery {
            text,
            truncated: false,
        },
    }
}

pub fn render_passage(passage: &Passage) -> String {
    format!("{}{}{}", passage.title, SEPARATOR, passage.text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodeMode {
    Query,
    Passage,
}

/// A query/passage encoder. Implementations are immutable and shareable across threads.
pub trait Encoder: Send + Sync {
    fn dimension(&self) -> usize;

    fn max_query_chars(&self) -> usize {
        DEFAULT_MAX_QUERY_CHARS
    }

    /// Encodes already-rendered texts, preserving order.
    fn encode_texts(&self, texts: &[String], mode: EncodeMode)
        -> Result<Vec<DenseVector>, EncoderError>;

    fn encode_query(&self, input: &QueryInput<'_>) -> Result<DenseVector, EncoderError> {
        let rendered = render_query(input, self.max_query_chars());
        let mut out = self.encode_texts(&[rendered.text], EncodeMode::Query)?;
        Ok(out.pop().expect("one vector per text"))
    }

    fn encode_passage(&self, passage: &Passage) -> Result<DenseVector, EncoderError> {
        let mut out = self.encode_texts(&[render_passage(passage)], EncodeMode::Passage)?;
        Ok(out.pop().expect("one vector per text"))
    }

    fn encode_passages(&self, passages: &[Passage]) -> Result<Vec<DenseVector>, EncoderError> {
        let texts: Vec<String> = passages.iter().map(render_passage).collect();
        self.encode_texts(&texts, EncodeMode::Passage)
    }
}

/// The concrete encoder kinds behind one dispatch type.
#[derive(Debug, Clone)]
pub enum EncoderSpec {
    Hashed(HashedEncoder),
    Linear(Arc<LinearEncoder>),
    Remote(Arc<RemoteEncoder>),
}

impl EncoderSpec {
    fn inner(&self) -> &dyn Encoder {
        match self {
            EncoderSpec::Hashed(e) => e,
            EncoderSpec::Linear(e) => e.as_ref(),
            EncoderSpec::Remote(e) => e.as_ref(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EncoderSpec::Hashed(_) => "hashed",
            EncoderSpec::Linear(_) => "linear",
            EncoderSpec::Remote(_) => "remote",
        }
    }
}

impl Encoder for EncoderSpec {
    fn dimension(&self) -> usize {
        self.inner().dimension()
    }

    fn max_query_chars(&self) -> usize {
        self.inner().max_query_chars()
    }

    fn encode_texts(
        &self,
        texts: &[String],
        mode: EncodeMode,
    ) -> Result<Vec<DenseVector>, EncoderError> {
        self.inner().encode_texts(texts, mode)
    }
}
