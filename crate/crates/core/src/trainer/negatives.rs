use std::collections::BTreeSet;

use super::TrainingExample;
use crate::corpus::{Corpus, Passage};

/// Top-`k` TF-IDF passages for the question, minus the gold positives.
///
/// With `use_links`, passages linked from any of the top-`k` hits (gold hits
/// included) are appended. The result never contains a positive.
pub fn mine_hard_negatives(corpus: &Corpus, example: &TrainingExample, k: usize, use_links: bool) -> Vec<Passage> {
    if k == 0 {
        return Vec::new();
    }
    let gold: BTreeSet<&str> = example.positives.iter().map(|p| p.id.as_str()).collect();
    let hits = corpus.tfidf_scores(&example.question, k).unwrap_or_default();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut out = Vec::new();
    let mut push = |p: &Passage, out: &mut Vec<Passage>| {
        if !gold.contains(p.id.as_str()) && seen.insert(p.id.clone()) {
            out.push(p.clone());
        }
    };
    let ranked: Vec<&Passage> = hits.iter().filter_map(|(h, _)| corpus.lookup(*h).ok()).collect();
    for p in &ranked {
        push(p, &mut out);
    }
    if use_links {
        for p in &ranked {
            for link in p.links() {
                if let Some(target) = corpus.handle(link).and_then(|h| corpus.lookup(h).ok()) {
                    push(target, &mut out);
                }
            }
        }
    }
    out
}
