use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{answer_recall, precision_recall_f1, recall_at_k, sp_em, EvalError, EvalRecord};
use crate::corpus::Corpus;
use crate::encoder::Encoder;
use crate::index::MipsIndex;
use crate::retriever::{rerank, retrieve, BeamConfig, ChainScorer, StopPredictor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k_list: Vec<usize>,
    pub beam: BeamConfig,
    /// Chains searched for the answer string.
    pub answer_k_chains: usize,
    /// Chains whose passages count as retrieved for precision/recall/F1.
    pub prf_k_chains: usize,
    /// Measure per-question latency (runs questions sequentially).
    pub timing: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_list: vec![2, 10, 20],
            beam: BeamConfig::default(),
            answer_k_chains: 1,
            prf_k_chains: 1,
            timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let pick = |q: f64| {
            let rank = (q * sorted.len() as f64).ceil() as usize;
            sorted[rank.clamp(1, sorted.len()) - 1]
        };
        Some(LatencyStats {
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p50: pick(0.5),
            p95: pick(0.95),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub question: String,
    #[serde(rename = "type", skip_serializing_if = "Option::is_none")]
    pub qtype: Option<String>,
    pub recall_at: BTreeMap<usize, bool>,
    pub sp_em: bool,
    /// `None` when the record has no answer.
    pub answer_recall: Option<bool>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub top_chain: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub missing_gold: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeBreakdown {
    pub count: usize,
    pub recall_at: BTreeMap<usize, f64>,
    pub sp_em: f64,
    pub answer_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_questions: usize,
    pub hops: usize,
    pub recall_at: BTreeMap<usize, f64>,
    pub sp_em: f64,
    pub answer_recall: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_type: BTreeMap<String, TypeBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub latency: Option<LatencyStats>,
    pub warnings: Vec<String>,
    pub per_question: Vec<QuestionResult>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable report");
        s.push('\n');
        s
    }

    /// One row per k.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,recall_at_k,sp_em,answer_recall,precision,recall,f1\n");
        for (k, r) in &self.recall_at {
            out.push_str(&format!(
                "{k},{r},{},{},{},{},{}\n",
                self.sp_em, self.answer_recall, self.precision, self.recall, self.f1
            ));
        }
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// Runs retrieval for every record and aggregates the metric suite.
pub fn evaluate(
    records: &[EvalRecord],
    corpus: &Corpus,
    index: &dyn MipsIndex,
    encoder: &dyn Encoder,
    config: &EvalConfig,
    scorer: Option<&dyn ChainScorer>,
    stop: Option<&StopPredictor>,
) -> Result<MetricsReport, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoRecords);
    }
    let hops = config.beam.hops;
    if config.k_list.is_empty() || config.k_list.contains(&0) {
        return Err(EvalError::BadKList);
    }
    if let Some(&k) = config.k_list.iter().find(|&&k| k < hops) {
        return Err(EvalError::KTooSmall { k, hops });
    }
    let mut beam = config.beam.clone();
    let max_k = config.k_list.iter().copied().max().unwrap_or(hops);
    beam.k_out = beam
        .k_out
        .max(max_k / hops)
        .max(config.answer_k_chains)
        .max(config.prf_k_chains);

    let run_one = |record: &EvalRecord| -> Result<(QuestionResult, f64), EvalError> {
        let start = Instant::now();
        let mut chains = retrieve(&record.question, corpus, index, encoder, &beam, stop)?;
        if let Some(s) = scorer {
            chains = rerank(chains, s, &record.question, corpus)?;
        }
        let elapsed = start.elapsed().as_secs_f64();
        let mut ids = Vec::with_capacity(chains.len());
        let mut texts = Vec::with_capacity(chains.len());
        for c in &chains {
            let ps = c.resolve(corpus)?;
            ids.push(ps.iter().map(|p| p.id.clone()).collect::<Vec<_>>());
            texts.push(ps.iter().map(|p| p.text.clone()).collect::<Vec<_>>());
        }
        let gold = record.gold_set();
        let mut recall = BTreeMap::new();
        for &k in &config.k_list {
            recall.insert(k, recall_at_k(&ids, &gold, k)?);
        }
        let top: Vec<String> = ids.first().cloned().unwrap_or_default();
        let answer = if record.answer.trim().is_empty() {
            None
        } else {
            match answer_recall(&texts, &record.answer, config.answer_k_chains) {
                Ok(b) => Some(b),
                Err(EvalError::EmptyAnswer) => None,
                Err(e) => return Err(e),
            }
        };
        let (p, r, f1) = precision_recall_f1(&ids, &gold, config.prf_k_chains);
        let missing_gold = gold
            .iter()
            .filter(|g| corpus.handle(g).is_none())
            .cloned()
            .collect();
        Ok((
            QuestionResult {
                question: record.question.clone(),
                qtype: record.qtype.clone(),
                recall_at: recall,
                sp_em: sp_em(&top, &gold),
                answer_recall: answer,
                precision: p,
                recall: r,
                f1,
                top_chain: top,
                missing_gold,
            },
            elapsed,
        ))
    };

    let results: Vec<(QuestionResult, f64)> = if config.timing {
        records.iter().map(run_one).collect::<Result<_, _>>()?
    } else {
        records.par_iter().map(run_one).collect::<Result<_, _>>()?
    };
    let latencies: Vec<f64> = results.iter().map(|(_, t)| *t).collect();
    let per_question: Vec<QuestionResult> = results.into_iter().map(|(q, _)| q).collect();

    let mut warnings = Vec::new();
    for (i, q) in per_question.iter().enumerate() {
        if !q.missing_gold.is_empty() {
            warnings.push(format!(
                "question {}: gold ids not in corpus: {}",
                i + 1,
                q.missing_gold.join(", ")
            ));
        }
    }

    let aggregate = |subset: &[&QuestionResult]| -> (BTreeMap<usize, f64>, f64, f64) {
        let recall_at = config
            .k_list
            .iter()
            .map(|&k| (k, mean(subset.iter().map(|q| indicator(q.recall_at[&k])))))
            .collect();
        let em = mean(subset.iter().map(|q| indicator(q.sp_em)));
        let ans = mean(subset.iter().filter_map(|q| q.answer_recall.map(indicator)));
        (recall_at, em, ans)
    };
    let all: Vec<&QuestionResult> = per_question.iter().collect();
    let (recall_at, sp, ans) = aggregate(&all);

    let mut groups: BTreeMap<String, Vec<&QuestionResult>> = BTreeMap::new();
    for q in &per_question {
        let key = q.qtype.clone().unwrap_or_else(|| "untyped".to_string());
        groups.entry(key).or_default().push(q);
    }
    let per_type = groups
        .into_iter()
        .map(|(t, qs)| {
            let (recall_at, sp_em, answer_recall) = aggregate(&qs);
            (
                t,
                TypeBreakdown {
                    count: qs.len(),
                    recall_at,
                    sp_em,
                    answer_recall,
                },
            )
        })
        .collect();

    Ok(MetricsReport {
        num_questions: per_question.len(),
        hops,
        recall_at,
        sp_em: sp,
        answer_recall: ans,
        precision: mean(per_question.iter().map(|q| q.precision)),
        recall: mean(per_question.iter().map(|q| q.recall)),
        f1: mean(per_question.iter().map(|q| q.f1)),
        per_type,
        latency: if config.timing {
            LatencyStats::from_samples(&latencies)
        } else {
            None
        },
        warnings,
        per_question,
    })
}
