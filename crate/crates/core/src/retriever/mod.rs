//! Beam search over retrieval hops.
//!
//! Hop 1 encodes the bare question; every later hop encodes the question
//! concatenated with the passages already on the beam and expands it by MIPS.
//! Beams are scored by the running sum of inner products.

mod rerank;

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, CorpusError, Passage, PassageHandle};
use crate::encoder::{DenseVector, Encoder, EncoderError, QueryInput};
use crate::index::{IndexError, MipsIndex};

pub use rerank::{
    lexical_chain_score, rerank, ChainScorer, LexicalScorer, RemoteScorer, ScoreRequest,
    ScoreResponse, TotalScoreScorer,
};

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("cannot retrieve from an empty corpus")]
    EmptyCorpus,
    #[error("invalid beam configuration: {0}")]
    InvalidConfig(String),
    #[error("index does not match corpus or encoder: {0}")]
    Mismatch(String),
    #[error("stop predictor has dimension {expected}, query vector has {got}")]
    StopDimension { expected: usize, got: usize },
    #[error("no chains to rerank")]
    NothingToRerank,
}

/// An ordered passage sequence with its per-hop inner products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub passages: Vec<PassageHandle>,
    pub hop_scores: Vec<f32>,
    /// Left-to-right sum of `hop_scores`.
    pub total_score: f32,
    /// Set by [`rerank`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_score: Option<f64>,
    /// Scorer failure message; such chains sort after every scored chain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rerank_error: Option<String>,
}

impl Chain {
    fn seed(handle: PassageHandle, score: f32) -> Self {
        Chain {
            passages: vec![handle],
            hop_scores: vec![score],
            total_score: score,
            rerank_score: None,
            rerank_error: None,
        }
    }

    fn extend(&self, handle: PassageHandle, score: f32) -> Self {
        let mut passages = self.passages.clone();
        passages.push(handle);
        let mut hop_scores = self.hop_scores.clone();
        hop_scores.push(score);
        Chain {
            passages,
            total_score: sum_left_to_right(&hop_scores),
            hop_scores,
            rerank_score: None,
            rerank_error: None,
        }
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn contains(&self, handle: PassageHandle) -> bool {
        self.passages.contains(&handle)
    }

    pub fn resolve<'c>(&self, corpus: &'c Corpus) -> Result<Vec<&'c Passage>, CorpusError> {
        self.passages.iter().map(|&h| corpus.lookup(h)).collect()
    }
}

pub fn sum_left_to_right(scores: &[f32]) -> f32 {
    scores.iter().fold(0.0f32, |acc, &s| acc + s)
}

/// Descending total score, then lexicographically ascending ordinal sequence.
pub fn chain_order(a: &Chain, b: &Chain) -> Ordering {
    b.total_score
        .total_cmp(&a.total_score)
        .then_with(|| a.passages.cmp(&b.passages))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamConfig {
    pub hops: usize,
    pub beam_width: usize,
    pub k_out: usize,
    /// MIPS k per beam expansion; `None` means `beam_width`.
    pub candidates_per_hop: Option<usize>,
    pub adaptive_stop: bool,
    pub stop_threshold: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            hops: 2,
            beam_width: 10,
            k_out: 10,
            candidates_per_hop: None,
            adaptive_stop: false,
            stop_threshold: 0.5,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<(), RetrieveError> {
        let bad = |m: &str| Err(RetrieveError::InvalidConfig(m.to_string()));
        if self.hops == 0 {
            return bad("hops must be at least 1");
        }
        if self.beam_width == 0 {
            return bad("beam_width must be at least 1");
        }
        if self.k_out == 0 {
            return bad("k_out must be at least 1");
        }
        if self.candidates_per_hop == Some(0) {
            return bad("candidates_per_hop must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.stop_threshold) {
            return bad("stop_threshold must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn candidates(&self) -> usize {
        self.candidates_per_hop.unwrap_or(self.beam_width)
    }
}

/// Logistic head over a query vector deciding whether retrieval can stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopPredictor {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl StopPredictor {
    pub fn new(weights: Vec<f64>, bias: f64) -> Self {
        StopPredictor { weights, bias }
    }

    pub fn zeros(dimension: usize) -> Self {
        StopPredictor::new(vec![0.0; dimension], 0.0)
    }

    /// `sigmoid(<w, v> + bias)`.
    pub fn predict_stop(&self, query: &DenseVector) -> Result<f64, RetrieveError> {
        if query.dimension() != self.weights.len() {
            return Err(RetrieveError::StopDimension {
                expected: self.weights.len(),
                got: query.dimension(),
            });
        }
        let z = self
            .weights
            .iter()
            .zip(query.values())
            .fold(self.bias, |acc, (w, &v)| acc + w * f64::from(v));
        Ok(sigmoid(z))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct Beam {
    chain: Chain,
    frozen: bool,
}

/// Top chains for `question`, best first.
///
/// Beams are pruned to `beam_width` after every hop but the last, which keeps
/// `k_out`. With `config.adaptive_stop` and a predictor, a beam whose stop
/// probability reaches the threshold keeps its length and competes on its
/// current score.
pub fn retrieve(
    question: &str,
    corpus: &Corpus,
    index: &dyn MipsIndex,
    encoder: &dyn Encoder,
    config: &BeamConfig,
    stop: Option<&StopPredictor>,
) -> Result<Vec<Chain>, RetrieveError> {
    config.validate()?;
    if corpus.is_empty() || index.is_empty() {
        return Err(RetrieveError::EmptyCorpus);
    }
    if index.len() != corpus.len() {
        return Err(RetrieveError::Mismatch(format!(
            "index holds {} vectors, corpus holds {} passages",
            index.len(),
            corpus.len()
        )));
    }
    if index.dimension() != encoder.dimension() {
        return Err(RetrieveError::Mismatch(format!(
            "index dimension {} but encoder dimension {}",
            index.dimension(),
            encoder.dimension()
        )));
    }
    let keep_at = |hop: usize| {
        if hop == config.hops {
            config.k_out
        } else {
            config.beam_width
        }
    };

    let q1 = encoder.encode_query(&QueryInput::new(question, &[]))?;
    let mut beams: Vec<Beam> = index
        .search(q1.values(), keep_at(1))?
        .into_iter()
        .map(|hit| Beam {
            chain: Chain::seed(hit.handle, hit.score),
            frozen: false,
        })
        .collect();

    let cph = config.candidates();
    for hop in 2..=config.hops {
        let expanded: Vec<Vec<Beam>> = beams
            .par_iter()
            .map(|beam| -> Result<Vec<Beam>, RetrieveError> {
                if beam.frozen {
                    return Ok(vec![Beam {
                        chain: beam.chain.clone(),
                        frozen: true,
                    }]);
                }
                let prior = beam.chain.resolve(corpus)?;
                let query = encoder.encode_query(&QueryInput::new(question, &prior))?;
                if config.adaptive_stop {
                    if let Some(p) = stop {
                        if p.predict_stop(&query)? >= config.stop_threshold {
                            return Ok(vec![Beam {
                                chain: beam.chain.clone(),
                                frozen: true,
                            }]);
                        }
                    }
                }
                let want = (cph + beam.chain.len()).min(index.len());
                Ok(index
                    .search(query.values(), want)?
                    .into_iter()
                    .filter(|hit| !beam.chain.contains(hit.handle))
                    .take(cph)
                    .map(|hit| Beam {
                        chain: beam.chain.extend(hit.handle, hit.score),
                        frozen: false,
                    })
                    .collect())
            })
            .collect::<Result<_, _>>()?;
        beams = expanded.into_iter().flatten().collect();
        beams.sort_by(|a, b| chain_order(&a.chain, &b.chain));
        beams.truncate(keep_at(hop));
    }
    let mut chains: Vec<Chain> = beams.into_iter().map(|b| b.chain).collect();
    chains.sort_by(chain_order);
    chains.truncate(config.k_out);
    Ok(chains)
}
