//! Contrastive training of the linear embedder.
//!
//! Each 2-hop example expands into one instance per hop: the question alone
//! paired with the first gold passage, then the question plus that passage
//! paired with the second. Negatives are the other positives in the batch,
//! mined hard negatives and, in the second phase, a bank of frozen passage
//! vectors.

mod config;
mod loss;
mod model_file;
mod negatives;
mod synthetic;
mod train;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Passage};
use crate::encoder::{EncoderError, QueryInput};
use crate::jsonl::{read_jsonl, JsonlError};

pub use config::TrainConfig;
pub use loss::{contrastive_loss, LossOutput, MemoryBank};
pub use model_file::{decode_model, encode_model, load_model, save_model, MODEL_MAGIC, MODEL_VERSION};
pub use negatives::mine_hard_negatives;
pub use synthetic::{generate_synthetic_task, SyntheticTask};
pub use train::{train, train_epoch, EpochLog, EpochStats, PreparedExample, TrainedModel, TrainingLog};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("contrastive loss needs at least one negative")]
    NoNegatives,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value during training: {0}")]
    NonFinite(String),
    #[error("ordering heuristic needs exactly 2 positives, got {0}")]
    NotTwoPositives(usize),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("example on line {line}: {reason}")]
    InvalidExample { line: usize, reason: String },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("synthetic task too small: {0}")]
    TooSmall(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Eval(#[from] Box<crate::eval::EvalError>),
    #[error(transparent)]
    Index(#[from] crate::index::IndexError),
    #[error("model file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("model format error: {0}")]
    Format(String),
    #[error("model checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    Checksum { stored: u64, computed: u64 },
}

impl From<crate::eval::EvalError> for TrainError {
    fn from(e: crate::eval::EvalError) -> Self {
        TrainError::Eval(Box::new(e))
    }
}

/// A question with its gold passages and negative pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub question: String,
    #[serde(default)]
    pub answer: String,
    pub positives: Vec<Passage>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub hard_negatives: Vec<Passage>,
    #[serde(default, rename = "type", skip_serializing_if = "Option::is_none")]
    pub qtype: Option<String>,
    /// Set by [`order_positives`] when neither rule decided the order.
    #[serde(skip)]
    pub heuristic_unresolved: bool,
}

pub fn load_examples(path: impl AsRef<std::path::Path>) -> Result<Vec<TrainingExample>, TrainError> {
    let rows: Vec<(usize, TrainingExample)> = read_jsonl(path)?;
    if rows.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    for (line, ex) in &rows {
        if ex.question.trim().is_empty() {
            return Err(TrainError::InvalidExample {
                line: *line,
                reason: "empty question".into(),
            });
        }
        if ex.positives.is_empty() {
            return Err(TrainError::InvalidExample {
                line: *line,
                reason: "no positives".into(),
            });
        }
    }
    Ok(rows.into_iter().map(|(_, e)| e).collect())
}

fn contains_ci(haystack: &str, needle: &str) -> bool {
    !needle.is_empty() && haystack.to_lowercase().contains(&needle.to_lowercase())
}

/// Puts the answer-bearing passage second; if both carry the answer, the
/// passage whose title is mentioned in the other goes second. Otherwise the
/// input order is kept and `heuristic_unresolved` is set.
pub fn order_positives(example: &TrainingExample) -> Result<TrainingExample, TrainError> {
    if example.positives.len() != 2 {
        return Err(TrainError::NotTwoPositives(example.positives.len()));
    }
    let (a, b) = (&example.positives[0], &example.positives[1]);
    let answer = example.answer.trim();
    let in_a = contains_ci(&a.text, answer);
    let in_b = contains_ci(&b.text, answer);
    let mut out = example.clone();
    out.heuristic_unresolved = false;
    let swap = match (in_a, in_b) {
        (true, false) => Some(true),
        (false, true) => Some(false),
        (true, true) => {
            let a_in_b = contains_ci(&b.text, a.title.trim());
            let b_in_a = contains_ci(&a.text, b.title.trim());
            match (a_in_b, b_in_a) {
                (true, false) => Some(true),
                (false, true) => Some(false),
                _ => None,
            }
        }
        (false, false) => None,
    };
    match swap {
        Some(true) => out.positives.swap(0, 1),
        Some(false) => {}
        None => out.heuristic_unresolved = true,
    }
    Ok(out)
}

/// One (query, positive) pair: the question, the gold passages of earlier hops,
/// and the gold passage of this hop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub question: String,
    pub prior: Vec<Passage>,
    pub positive: Passage,
}

impl TrainingInstance {
    pub fn with_query_input<T>(&self, f: impl FnOnce(&QueryInput<'_>) -> T) -> T {
        let prior: Vec<&Passage> = self.prior.iter().collect();
        f(&QueryInput::new(&self.question, &prior))
    }
}

/// Expands an example hop by hop. With `ordered == false` the positives are
/// shuffled first using `rng`.
pub fn training_instances<R: Rng + ?Sized>(
    example: &TrainingExample,
    ordered: bool,
    rng: &mut R,
) -> Vec<TrainingInstance> {
    let mut positives = example.positives.clone();
    if !ordered {
        positives.shuffle(rng);
    }
    (0..positives.len())
        .map(|t| TrainingInstance {
            question: example.question.clone(),
            prior: positives[..t].to_vec(),
            positive: positives[t].clone(),
        })
        .collect()
}
