//! Chain reranking through a pluggable scorer.

use std::collections::BTreeSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Chain, RetrieveError};
use crate::corpus::Corpus;
use crate::encoder::render_passage;
use crate::text::tokenize;

/// Scores whole chains for a question. One result per input chain, in order.
pub trait ChainScorer: Send + Sync {
    fn score_chains(&self, question: &str, chains: &[Chain], corpus: &Corpus) -> Vec<Result<f64, String>>;
}

/// Re-sorts chains by scorer output, descending and stable.
///
/// Chains whose score failed or came back non-finite keep their relative
/// order at the end and carry the error in `rerank_error`.
pub fn rerank(
    chains: Vec<Chain>,
    scorer: &dyn ChainScorer,
    question: &str,
    corpus: &Corpus,
) -> Result<Vec<Chain>, RetrieveError> {
    if chains.is_empty() {
        return Err(RetrieveError::NothingToRerank);
    }
    let mut scores = scorer.score_chains(question, &chains, corpus);
    if scores.len() != chains.len() {
        let msg = format!("scorer returned {} scores for {} chains", scores.len(), chains.len());
        scores = vec![Err(msg); chains.len()];
    }
    let mut scored = Vec::with_capacity(chains.len());
    let mut failed = Vec::new();
    for (mut chain, score) in chains.into_iter().zip(scores) {
        match score {
            Ok(s) if s.is_finite() => {
                chain.rerank_score = Some(s);
                scored.push(chain);
            }
            Ok(s) => {
                chain.rerank_error = Some(format!("non-finite score {s}"));
                failed.push(chain);
            }
            Err(e) => {
                chain.rerank_error = Some(e);
                failed.push(chain);
            }
        }
    }
    scored.sort_by(|a, b| b.rerank_score.unwrap().total_cmp(&a.rerank_score.unwrap()));
    scored.extend(failed);
    Ok(scored)
}

/// Passes the retriever's own score through; leaves the order unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct TotalScoreScorer;

impl ChainScorer for TotalScoreScorer {
    fn score_chains(&self, _question: &str, chains: &[Chain], _corpus: &Corpus) -> Vec<Result<f64, String>> {
        chains.iter().map(|c| Ok(f64::from(c.total_score))).collect()
    }
}

/// Fraction of the question's distinct tokens found in the chain's passage text.
pub fn lexical_chain_score(question: &str, chain: &Chain, corpus: &Corpus) -> Result<f64, String> {
    let wanted: BTreeSet<String> = tokenize(question).into_iter().collect();
    if wanted.is_empty() {
        return Ok(0.0);
    }
    let mut have = BTreeSet::new();
    for &h in &chain.passages {
        let p = corpus.lookup(h).map_err(|e| e.to_string())?;
        have.extend(tokenize(&p.text));
    }
    let hits = wanted.iter().filter(|t| have.contains(*t)).count();
    Ok(hits as f64 / wanted.len() as f64)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalScorer;

impl ChainScorer for LexicalScorer {
    fn score_chains(&self, question: &str, chains: &[Chain], corpus: &Corpus) -> Vec<Result<f64, String>> {
        chains
            .iter()
            .map(|c| lexical_chain_score(question, c, corpus))
            .collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScoreRequest {
    pub question: String,
    pub chains: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
}

/// Client for `POST {base}/score`. Passages are sent as `title [SEP] text`.
#[derive(Debug)]
pub struct RemoteScorer {
    base_url: String,
    agent: ureq::Agent,
}

impl RemoteScorer {
    pub fn new(base_url: &str, timeout: Duration) -> Self {
        RemoteScorer {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent: ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .http_status_as_error(false)
                .build()
                .into(),
        }
    }

    fn request(&self, body: &ScoreRequest) -> Result<Vec<f64>, String> {
        let url = format!("{}/score", self.base_url);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| format!("scorer {url} unreachable: {e}"))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let detail = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(format!("scorer returned HTTP {status}: {detail}"));
        }
        let parsed: ScoreResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| format!("bad scorer response: {e}"))?;
        Ok(parsed.scores)
    }
}

impl ChainScorer for RemoteScorer {
    fn score_chains(&self, question: &str, chains: &[Chain], corpus: &Corpus) -> Vec<Result<f64, String>> {
        let mut texts = Vec::with_capacity(chains.len());
        for c in chains {
            match c.resolve(corpus) {
                Ok(ps) => texts.push(ps.into_iter().map(render_passage).collect()),
                Err(e) => return vec![Err(e.to_string()); chains.len()],
            }
        }
        let body = ScoreRequest {
            question: question.to_string(),
            chains: texts,
        };
        match self.request(&body) {
            Ok(scores) if scores.len() == chains.len() => scores.into_iter().map(Ok).collect(),
            Ok(scores) => {
                let msg = format!("scorer returned {} scores for {} chains", scores.len(), chains.len());
                vec![Err(msg); chains.len()]
            }
            Err(e) => vec![Err(e); chains.len()],
        }
    }
}
