//! Latency scaling of flat and HNSW search as measured by `bench_latency`.

use mdr_core::corpus::{Corpus, Passage};
use mdr_core::encoder::HashedEncoder;
use mdr_core::eval::{bench_latency, EvalRecord};
use mdr_core::index::{FlatIndex, HnswIndex, HnswParams, MipsIndex};
use mdr_core::retriever::BeamConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const DIM: usize = 32;

fn corpus(n: usize) -> Corpus {
    Corpus::from_passages((0..n).map(|i| Passage::new(format!("p{i}"), "t", "x")).collect()).unwrap()
}

fn rows(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f32>> {
    (0..n).map(|_| (0..DIM).map(|_| StandardNormal.sample(rng)).collect()).collect()
}

fn queries(rng: &mut ChaCha8Rng) -> Vec<EvalRecord> {
    (0..40)
        .map(|i| EvalRecord {
            question: format!("query {i} about topic {}", rng.random_range(0..1000)),
            answer: String::new(),
            gold_ids: vec![],
            qtype: None,
        })
        .collect()
}

/// Index seconds per query at k=10, best of three runs.
fn index_secs(corpus: &Corpus, index: &dyn MipsIndex, qs: &[EvalRecord]) -> f64 {
    let enc = HashedEncoder::new(DIM, 0).unwrap();
    let base = BeamConfig::default();
    (0..3)
        .map(|_| bench_latency(corpus, index, &enc, qs, &[10], &base).unwrap()[0].index_sec)
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn hnsw_beats_flat_and_scales_sublinearly() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let all = rows(&mut rng, 100_000);
    let qs = queries(&mut rng);
    let mut times = Vec::new();
    for n in [50_000, 100_000] {
        let c = corpus(n);
        let flat = FlatIndex::from_rows(&all[..n]).unwrap();
        let hnsw = HnswIndex::build(flat.clone(), HnswParams::default()).unwrap();
        times.push((index_secs(&c, &flat, &qs), index_secs(&c, &hnsw, &qs)));
    }
    let (flat_half, hnsw_half) = times[0];
    let (flat_full, hnsw_full) = times[1];
    eprintln!("flat {flat_half:.2e} -> {flat_full:.2e}, hnsw {hnsw_half:.2e} -> {hnsw_full:.2e} s/query");
    assert!(hnsw_full < flat_full);
    let flat_ratio = flat_full / flat_half;
    assert!((1.4..=2.6).contains(&flat_ratio), "flat grew {flat_ratio:.2}x");
    assert!(hnsw_full / hnsw_half < 1.8, "hnsw grew {:.2}x", hnsw_full / hnsw_half);
}
