#![allow(dead_code)]

use std::cmp::Ordering;

use mdr_core::corpus::{Corpus, Passage, PassageHandle};
use mdr_core::encoder::{Encoder, QueryInput};
use rand::seq::IndexedRandom;
use rand::Rng;

const WORDS: &[&str] = &[
    "river", "mountain", "city", "lake", "king", "queen", "bridge", "tower", "north", "south", "born", "capital",
    "film", "album", "band", "player", "river", "war", "island", "coast",
];

/// Small random corpus; a narrow vocabulary makes duplicate texts and tied scores likely.
pub fn random_corpus<R: Rng>(rng: &mut R, size: usize) -> Corpus {
    let passages = (0..size)
        .map(|i| {
            let title = WORDS.choose(rng).unwrap().to_string();
            let len = rng.random_range(1..6);
            let text: Vec<&str> = (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect();
            Passage::new(format!("p{i}"), title, text.join(" "))
        })
        .collect();
    Corpus::from_passages(passages).unwrap()
}

pub fn random_question<R: Rng>(rng: &mut R) -> String {
    let len = rng.random_range(1..5);
    let words: Vec<&str> = (0..len).map(|_| *WORDS.choose(rng).unwrap()).collect();
    words.join(" ")
}

pub fn plain_dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Full sort over every row: score descending, ordinal ascending.
pub fn sort_oracle(rows: &[Vec<f32>], query: &[f32], k: usize) -> Vec<(usize, f32)> {
    let mut all: Vec<(usize, f32)> = rows.iter().enumerate().map(|(i, r)| (i, plain_dot(r, query))).collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

pub struct OracleChain {
    pub passages: Vec<usize>,
    pub hop_scores: Vec<f32>,
    pub total: f32,
}

/// Every ordered pair of distinct passages, scored hop by hop.
pub fn two_hop_oracle(question: &str, corpus: &Corpus, encoder: &dyn Encoder) -> Vec<OracleChain> {
    let rows: Vec<Vec<f32>> = encoder
        .encode_passages(corpus.passages())
        .unwrap()
        .into_iter()
        .map(|v| v.into_values())
        .collect();
    let q1 = encoder.encode_query(&QueryInput::new(question, &[])).unwrap();
    let mut out = Vec::new();
    for (i, first) in corpus.passages().iter().enumerate() {
        let s1 = plain_dot(&rows[i], q1.values());
        let prior = [first];
        let q2 = encoder.encode_query(&QueryInput::new(question, &prior)).unwrap();
        for (j, row) in rows.iter().enumerate() {
            if j == i {
                continue;
            }
            let s2 = plain_dot(row, q2.values());
            out.push(OracleChain {
                passages: vec![i, j],
                hop_scores: vec![s1, s2],
                total: s1 + s2,
            });
        }
    }
    out.sort_by(|a, b| match b.total.total_cmp(&a.total) {
        Ordering::Equal => a.passages.cmp(&b.passages),
        o => o,
    });
    out
}

pub fn ordinals(handles: &[PassageHandle]) -> Vec<usize> {
    handles.iter().map(|h| h.0).collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central differences of `f` at `x`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}
