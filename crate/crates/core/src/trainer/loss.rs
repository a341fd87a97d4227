use std::collections::VecDeque;

use super::TrainError;

/// Loss value and gradients of one contrastive instance.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad_query: Vec<f64>,
    pub grad_positive: Vec<f64>,
    /// One gradient per entry of `negatives`; bank vectors get none.
    pub grad_negatives: Vec<Vec<f64>>,
    /// Number of logits in the softmax denominator.
    pub denominator_terms: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-<q, p+> + log(exp<q, p+> + Σ exp<q, n>)` over `negatives` and `bank`.
///
/// Stabilized by the maximum logit. Bank vectors enter the denominator but
/// receive no gradient.
pub fn contrastive_loss(
    query: &[f64],
    positive: &[f64],
    negatives: &[&[f64]],
    bank: &[&[f64]],
) -> Result<LossOutput, TrainError> {
    if negatives.is_empty() && bank.is_empty() {
        return Err(TrainError::NoNegatives);
    }
    let d = query.len();
    if positive.len() != d || negatives.iter().chain(bank).any(|v| v.len() != d) {
        return Err(TrainError::Shape("candidate dimension differs from query".into()));
    }
    let candidates: Vec<&[f64]> = std::iter::once(positive)
        .chain(negatives.iter().copied())
        .chain(bank.iter().copied())
        .collect();
    let logits: Vec<f64> = candidates.iter().map(|c| dot(query, c)).collect();
    let (arg, max) = logits
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, s)| if s > best.1 { (i, s) } else { best });
    let exps: Vec<f64> = logits.iter().map(|s| (s - max).exp()).collect();
    let rest: f64 = exps.iter().enumerate().filter(|&(i, _)| i != arg).map(|(_, e)| e).sum();
    let loss = (max - logits[0]) + rest.ln_1p();
    if !loss.is_finite() {
        return Err(TrainError::NonFinite(format!("loss {loss} (max logit {max})")));
    }
    let total = 1.0 + rest;
    let probs: Vec<f64> = exps.iter().map(|e| e / total).collect();

    let mut grad_query: Vec<f64> = positive.iter().map(|p| -p).collect();
    for (c, &pr) in candidates.iter().zip(&probs) {
        for (g, v) in grad_query.iter_mut().zip(c.iter()) {
            *g += pr * v;
        }
    }
    let grad_positive = query.iter().map(|q| (probs[0] - 1.0) * q).collect();
    let grad_negatives = probs[1..=negatives.len()]
        .iter()
        .map(|&pr| query.iter().map(|q| pr * q).collect())
        .collect();
    Ok(LossOutput {
        loss,
        grad_query,
        grad_positive,
        grad_negatives,
        denominator_terms: candidates.len(),
    })
}

/// FIFO of frozen passage vectors, each tagged with its passage id.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    entries: VecDeque<(String, Vec<f64>)>,
}

impl MemoryBank {
    pub fn new(capacity: usize) -> Self {
        MemoryBank {
            capacity,
            entries: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends, evicting the oldest entry once full.
    pub fn push(&mut self, id: String, vector: Vec<f64>) {
        if self.capacity == 0 {
            return;
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((id, vector));
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.entries.iter().map(|(id, v)| (id.as_str(), v.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_pair_is_ln2() {
        let q = [1.0, 0.5];
        let out = contrastive_loss(&q, &[0.3, 0.2], &[&[0.3, 0.2]], &[]).unwrap();
        assert!((out.loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(out.denominator_terms, 2);
    }

    #[test]
    fn saturated_gap_is_tiny() {
        let out = contrastive_loss(&[1.0], &[50.0], &[&[0.0]], &[]).unwrap();
        assert!(out.loss < 1e-20);
        assert!(out.loss >= 0.0);
    }

    #[test]
    fn all_equal_logits_give_ln_one_plus_n() {
        let z = [0.0, 0.0];
        let negs: Vec<&[f64]> = vec![&z; 4];
        let out = contrastive_loss(&[1.0, 1.0], &z, &negs[..3], &negs[3..]).unwrap();
        assert!((out.loss - 5f64.ln()).abs() < 1e-12);
        assert_eq!(out.grad_negatives.len(), 3);
    }

    #[test]
    fn errors() {
        assert!(matches!(contrastive_loss(&[1.0], &[1.0], &[], &[]), Err(TrainError::NoNegatives)));
        assert!(matches!(contrastive_loss(&[1.0], &[1.0], &[&[1.0, 2.0]], &[]), Err(TrainError::Shape(_))));
    }

    #[test]
    fn bank_is_fifo() {
        let mut bank = MemoryBank::new(2);
        bank.push("a".into(), vec![1.0]);
        bank.push("b".into(), vec![2.0]);
        bank.push("c".into(), vec![3.0]);
        let ids: Vec<&str> = bank.iter().map(|(id, _)| id).collect();
        assert_eq!(ids, vec!["b", "c"]);
        assert_eq!(bank.len(), 2);
    }
}
