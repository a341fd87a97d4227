//! Retrieval metrics over ranked chains, the evaluation runner and the
//! latency benchmark.
//!
//! Metric functions take chains as lists of passage ids (or texts), so gold
//! ids missing from the corpus simply never match.

mod bench;
mod report;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{read_jsonl, JsonlError};

pub use bench::{bench_latency, bench_to_csv, BenchRow, BENCH_CSV_HEADER};
pub use report::{evaluate, EvalConfig, LatencyStats, MetricsReport, QuestionResult, TypeBreakdown};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("k ({k}) is smaller than the chain length ({hops})")]
    KTooSmall { k: usize, hops: usize },
    #[error("answer is empty after normalization")]
    EmptyAnswer,
    #[error("evaluation set is empty")]
    NoRecords,
    #[error("record on line {line} has no gold ids")]
    NoGold { line: usize },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error(transparent)]
    Retrieve(#[from] crate::retriever::RetrieveError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
    #[error(transparent)]
    Encoder(#[from] crate::encoder::EncoderError),
    #[error(transparent)]
    Index(#[from] crate::index::IndexError),
    #[error("benchmark needs at least one query")]
    NoQueries,
    #[error("k list is empty or contains 0")]
    BadKList,
    #[error("cannot build thread pool: {0}")]
    ThreadPool(String),
}

/// One evaluation question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub question: String,
    #[serde(default)]
    pub answer: String,
    #[serde(default)]
    pub gold_ids: Vec<String>,
    #[serde(default, rename = "type", skip_serializing_if = "Option::is_none")]
    pub qtype: Option<String>,
}

impl EvalRecord {
    pub fn gold_set(&self) -> BTreeSet<String> {
        self.gold_ids.iter().cloned().collect()
    }
}

pub fn load_eval_records(path: impl AsRef<std::path::Path>) -> Result<Vec<EvalRecord>, EvalError> {
    let rows: Vec<(usize, EvalRecord)> = read_jsonl(path)?;
    if rows.is_empty() {
        return Err(EvalError::NoRecords);
    }
    for (line, r) in &rows {
        if r.gold_ids.is_empty() {
            return Err(EvalError::NoGold { line: *line });
        }
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

fn union_of_top(chains: &[Vec<String>], n: usize) -> BTreeSet<&str> {
    chains
        .iter()
        .take(n)
        .flat_map(|c| c.iter().map(String::as_str))
        .collect()
}

/// Whether every gold id appears among the top `⌊k/n⌋` chains, where `n` is
/// the longest chain length.
pub fn recall_at_k(chains: &[Vec<String>], gold: &BTreeSet<String>, k: usize) -> Result<bool, EvalError> {
    let hops = chains.iter().map(Vec::len).max().unwrap_or(1).max(1);
    if k < hops {
        return Err(EvalError::KTooSmall { k, hops });
    }
    let got = union_of_top(chains, k / hops);
    Ok(gold.iter().all(|g| got.contains(g.as_str())))
}

/// Whether the top chain's passage set equals the gold set.
pub fn sp_em(top_chain: &[String], gold: &BTreeSet<String>) -> bool {
    let got: BTreeSet<&str> = top_chain.iter().map(String::as_str).collect();
    !got.is_empty() && got.len() == gold.len() && gold.iter().all(|g| got.contains(g.as_str()))
}

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punc: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punc
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Whether the normalized answer occurs in any passage text of the top `k_chains` chains.
pub fn answer_recall(chain_texts: &[Vec<String>], answer: &str, k_chains: usize) -> Result<bool, EvalError> {
    let needle = normalize_answer(answer);
    if needle.is_empty() {
        return Err(EvalError::EmptyAnswer);
    }
    Ok(chain_texts
        .iter()
        .take(k_chains)
        .flatten()
        .any(|t| normalize_answer(t).contains(&needle)))
}

/// Precision, recall and F1 of the passage ids in the top `k_chains` chains.
pub fn precision_recall_f1(chains: &[Vec<String>], gold: &BTreeSet<String>, k_chains: usize) -> (f64, f64, f64) {
    let got = union_of_top(chains, k_chains);
    let hit = gold.iter().filter(|g| got.contains(g.as_str())).count() as f64;
    let p = if got.is_empty() { 0.0 } else { hit / got.len() as f64 };
    let r = if gold.is_empty() { 0.0 } else { hit / gold.len() as f64 };
    let f1 = if p > 0.0 && r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}
