//! Passage corpus: JSONL ingestion, stable ordinal handles and a TF-IDF scorer.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::tokenize;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed passage JSON: {message}")]
    Json { line: usize, message: String },
    #[error("line {line}: duplicate passage id {id:?} (first seen on line {first_line})")]
    DuplicateId {
        id: String,
        line: usize,
        first_line: usize,
    },
    #[error("line {line}: {reason}")]
    InvalidPassage { line: usize, reason: String },
    #[error("corpus is empty")]
    Empty,
    #[error("passage handle {handle} out of range for corpus of {size}")]
    HandleOutOfRange { handle: usize, size: usize },
    #[error("unknown passage id {0:?}")]
    UnknownId(String),
    #[error("k must be at least 1")]
    InvalidK,
}

/// One retrievable unit of text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    pub title: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<BTreeMap<String, String>>,
}

impl Passage {
    pub fn new(id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Passage {
            id: id.into(),
            title: title.into(),
            text: text.into(),
            meta: None,
        }
    }

    /// Ids listed in `meta["links"]` (comma separated), if any.
    pub fn links(&self) -> Vec<&str> {
        self.meta
            .as_ref()
            .and_then(|m| m.get("links"))
            .map(|l| l.split(',').map(str::trim).filter(|s| !s.is_empty()).collect())
            .unwrap_or_default()
    }

    fn validate(&self, line: usize) -> Result<(), CorpusError> {
        if self.id.is_empty() {
            return Err(CorpusError::InvalidPassage {
                line,
                reason: "passage id is empty".into(),
            });
        }
        if self.text.is_empty() {
            return Err(CorpusError::InvalidPassage {
                line,
                reason: format!("passage {:?} has empty text", self.id),
            });
        }
        Ok(())
    }
}

/// Dense 0-based ordinal of a passage within its corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PassageHandle(pub usize);

impl fmt::Display for PassageHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// An immutable, validated passage collection.
#[derive(Debug)]
pub struct Corpus {
    passages: Vec<Passage>,
    by_id: HashMap<String, PassageHandle>,
    tfidf: OnceLock<TfIdf>,
}

impl Corpus {
    /// Builds a corpus from passages in order. Line numbers in errors are 1-based positions.
    pub fn from_passages(passages: Vec<Passage>) -> Result<Self, CorpusError> {
        if passages.is_empty() {
            return Err(CorpusError::Empty);
        }
        let mut by_id = HashMap::with_capacity(passages.len());
        for (ordinal, p) in passages.iter().enumerate() {
            p.validate(ordinal + 1)?;
            if let Some(prev) = by_id.insert(p.id.clone(), PassageHandle(ordinal)) {
                return Err(CorpusError::DuplicateId {
                    id: p.id.clone(),
                    line: ordinal + 1,
                    first_line: prev.0 + 1,
                });
            }
        }
        Ok(Corpus {
            passages,
            by_id,
            tfidf: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn lookup(&self, handle: PassageHandle) -> Result<&Passage, CorpusError> {
        self.passages
            .get(handle.0)
            .ok_or(CorpusError::HandleOutOfRange {
                handle: handle.0,
                size: self.passages.len(),
            })
    }

    pub fn handle(&self, id: &str) -> Option<PassageHandle> {
        self.by_id.get(id).copied()
    }

    pub fn handle_of(&self, id: &str) -> Result<PassageHandle, CorpusError> {
        self.handle(id).ok_or_else(|| CorpusError::UnknownId(id.to_string()))
    }

    /// Top-k passages by TF-IDF cosine over title and text. Zero scores are dropped.
    pub fn tfidf_scores(
        &self,
        query: &str,
        k: usize,
    ) -> Result<Vec<(PassageHandle, f64)>, CorpusError> {
        if k == 0 {
            return Err(CorpusError::InvalidK);
        }
        let model = self.tfidf.get_or_init(|| TfIdf::build(&self.passages));
        Ok(model.top_k(query, k))
    }
}

/// Reads a JSONL corpus, one passage object per line. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut passages = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let passage: Passage = serde_json::from_str(&line).map_err(|e| CorpusError::Json {
            line: line_no,
            message: e.to_string(),
        })?;
        passage.validate(line_no)?;
        if let Some(&first_line) = seen.get(&passage.id) {
            return Err(CorpusError::DuplicateId {
                id: passage.id,
                line: line_no,
                first_line,
            });
        }
        seen.insert(passage.id.clone(), line_no);
        passages.push(passage);
    }
    Corpus::from_passages(passages)
}

/// Log-tf, smoothed-idf, cosine-normalized term weighting.
#[derive(Debug)]
struct TfIdf {
    vocab: HashMap<String, usize>,
    idf: Vec<f64>,
    unseen_idf: f64,
    /// term id -> (ordinal, normalized weight), ordinals ascending
    postings: Vec<Vec<(usize, f64)>>,
}

fn term_counts(text: &str) -> BTreeMap<String, u32> {
    let mut counts = BTreeMap::new();
    for tok in tokenize(text) {
        *counts.entry(tok).or_insert(0) += 1;
    }
    counts
}

fn log_tf(count: u32) -> f64 {
    1.0 + f64::from(count).ln()
}

impl TfIdf {
    fn build(passages: &[Passage]) -> Self {
        let n = passages.len() as f64;
        let docs: Vec<BTreeMap<String, u32>> = passages
            .iter()
            .map(|p| term_counts(&format!("{} {}", p.title, p.text)))
            .collect();

        let mut vocab: HashMap<String, usize> = HashMap::new();
        let mut df: Vec<u32> = Vec::new();
        for doc in &docs {
            for term in doc.keys() {
                let next = vocab.len();
                let id = *vocab.entry(term.clone()).or_insert(next);
                if id == df.len() {
                    df.push(0);
                }
                df[id] += 1;
            }
        }
        let idf: Vec<f64> = df
            .iter()
            .map(|&d| ((1.0 + n) / (1.0 + f64::from(d))).ln() + 1.0)
            .collect();
        let unseen_idf = (1.0 + n).ln() + 1.0;

        let mut postings = vec![Vec::new(); vocab.len()];
        for (ordinal, doc) in docs.iter().enumerate() {
            let weights: Vec<(usize, f64)> = doc
                .iter()
                .map(|(term, &c)| {
                    let id = vocab[term];
                    (id, log_tf(c) * idf[id])
                })
                .collect();
            let norm = weights.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            for (id, w) in weights {
                postings[id].push((ordinal, w / norm));
            }
        }
        TfIdf {
            vocab,
            idf,
            unseen_idf,
            postings,
        }
    }

    fn top_k(&self, query: &str, k: usize) -> Vec<(PassageHandle, f64)> {
        let counts = term_counts(query);
        let mut weighted = Vec::with_capacity(counts.len());
        let mut norm_sq = 0.0;
        for (term, &c) in &counts {
            let id = self.vocab.get(term).copied();
            let idf = id.map_or(self.unseen_idf, |i| self.idf[i]);
            let w = log_tf(c) * idf;
            norm_sq += w * w;
            if let Some(id) = id {
                weighted.push((id, w));
            }
        }
        if weighted.is_empty() {
            return Vec::new();
        }
        let norm = norm_sq.sqrt();
        let mut scores: HashMap<usize, f64> = HashMap::new();
        for (id, w) in weighted {
            for &(ordinal, dw) in &self.postings[id] {
                *scores.entry(ordinal).or_insert(0.0) += w / norm * dw;
            }
        }
        let mut ranked: Vec<(PassageHandle, f64)> = scores
            .into_iter()
            .filter(|&(_, s)| s > 0.0)
            .map(|(o, s)| (PassageHandle(o), s))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        ranked
    }
}
