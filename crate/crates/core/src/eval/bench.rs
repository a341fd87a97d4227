use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::Serialize;

use super::{recall_at_k, EvalError, EvalRecord};
use crate::corpus::{Corpus, PassageHandle};
use crate::encoder::{DenseVector, EncodeMode, Encoder, EncoderError};
use crate::index::{Hit, IndexError, MipsIndex};
use crate::retriever::{retrieve, BeamConfig};

pub const BENCH_CSV_HEADER: &str = "k,metric,sec_per_query,encoder_sec,index_sec";

/// One benchmark row. `metric` is the mean R@(k·hops) over queries that carry
/// gold ids, absent when none do.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub k: usize,
    pub metric: Option<f64>,
    pub sec_per_query: f64,
    pub encoder_sec: f64,
    pub index_sec: f64,
}

struct Timed<'a, T: ?Sized> {
    inner: &'a T,
    nanos: AtomicU64,
}

impl<'a, T: ?Sized> Timed<'a, T> {
    fn new(inner: &'a T) -> Self {
        Timed {
            inner,
            nanos: AtomicU64::new(0),
        }
    }

    fn record(&self, start: Instant) {
        self.nanos
            .fetch_add(start.elapsed().as_nanos() as u64, Ordering::Relaxed);
    }

    fn take_secs(&self) -> f64 {
        self.nanos.swap(0, Ordering::Relaxed) as f64 * 1e-9
    }
}

impl Encoder for Timed<'_, dyn Encoder + '_> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn max_query_chars(&self) -> usize {
        self.inner.max_query_chars()
    }

    fn encode_texts(&self, texts: &[String], mode: EncodeMode) -> Result<Vec<DenseVector>, EncoderError> {
        let start = Instant::now();
        let out = self.inner.encode_texts(texts, mode);
        self.record(start);
        out
    }
}

impl MipsIndex for Timed<'_, dyn MipsIndex + '_> {
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    fn len(&self) -> usize {
        self.inner.len()
    }

    fn id(&self, handle: PassageHandle) -> Option<&str> {
        self.inner.id(handle)
    }

    fn search(&self, query: &[f32], k: usize) -> Result<Vec<Hit>, IndexError> {
        let start = Instant::now();
        let out = self.inner.search(query, k);
        self.record(start);
        out
    }
}

/// Sequential, batch-size-1 latency per k, with `beam_width = k_out = k`.
pub fn bench_latency(
    corpus: &Corpus,
    index: &dyn MipsIndex,
    encoder: &dyn Encoder,
    queries: &[EvalRecord],
    k_list: &[usize],
    base: &BeamConfig,
) -> Result<Vec<BenchRow>, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::NoQueries);
    }
    if k_list.is_empty() || k_list.contains(&0) {
        return Err(EvalError::BadKList);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| EvalError::ThreadPool(e.to_string()))?;
    let timed_enc = Timed::new(encoder);
    let timed_idx = Timed::new(index);
    let n = queries.len() as f64;
    let mut rows = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let beam = BeamConfig {
            beam_width: k,
            k_out: k,
            ..base.clone()
        };
        timed_enc.take_secs();
        timed_idx.take_secs();
        let mut wall = 0.0;
        let mut hits = Vec::new();
        for q in queries {
            let start = Instant::now();
            let chains = pool.install(|| retrieve(&q.question, corpus, &timed_idx, &timed_enc, &beam, None))?;
            wall += start.elapsed().as_secs_f64();
            if !q.gold_ids.is_empty() {
                let ids: Vec<Vec<String>> = chains
                    .iter()
                    .map(|c| c.resolve(corpus).map(|ps| ps.iter().map(|p| p.id.clone()).collect()))
                    .collect::<Result<_, _>>()?;
                let hops = ids.iter().map(Vec::len).max().unwrap_or(1).max(1);
                hits.push(recall_at_k(&ids, &q.gold_set(), k * hops)?);
            }
        }
        let metric = if hits.is_empty() {
            None
        } else {
            Some(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
        };
        rows.push(BenchRow {
            k,
            metric,
            sec_per_query: wall / n,
            encoder_sec: timed_enc.take_secs() / n,
            index_sec: timed_idx.take_secs() / n,
        });
    }
    Ok(rows)
}

pub fn bench_to_csv(rows: &[BenchRow]) -> String {
    let mut out = format!("{BENCH_CSV_HEADER}\n");
    for r in rows {
        let metric = r.metric.map(|m| m.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{:.9},{:.9},{:.9}\n",
            r.k, metric, r.sec_per_query, r.encoder_sec, r.index_sec
        ));
    }
    out
}
