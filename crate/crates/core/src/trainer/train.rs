use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    contrastive_loss, mine_hard_negatives, order_positives, training_instances, MemoryBank,
    TrainConfig, TrainError, TrainingExample,
};
use crate::corpus::{Corpus, Passage};
use crate::encoder::{
    render_passage, render_query, Encoder, LinearEncoder, LinearForward, LinearGrad,
};
use crate::eval::{evaluate, EvalConfig, EvalRecord};
use crate::index::FlatIndex;
use crate::retriever::BeamConfig;

/// An example after ordering and negative mining, ready for batching.
pub type PreparedExample = TrainingExample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub instances: usize,
    pub batches: usize,
    /// Mean number of logits per softmax denominator.
    pub mean_denominator: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: u8,
    pub train_loss: f64,
    pub heldout_loss: f64,
    pub heldout_r2: Option<f64>,
    pub bank_size: usize,
    pub mean_denominator: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub config: TrainConfig,
    pub train_examples: usize,
    pub validation_examples: usize,
    pub unresolved_order: usize,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub selected_epoch: usize,
    pub final_phase: u8,
    pub heldout_r2: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub encoder: LinearEncoder,
    pub log: TrainingLog,
}

struct Slot<'a> {
    passage: &'a Passage,
    features: Vec<f64>,
    forward: LinearForward,
}

fn encode_slot<'a>(model: &LinearEncoder, passage: &'a Passage) -> Result<Slot<'a>, TrainError> {
    let features = model.features(&render_passage(passage))?;
    let forward = model.passage_embedder().forward(&features)?;
    Ok(Slot {
        passage,
        features,
        forward,
    })
}

/// Whether passage-side parameters receive gradient in the model's current phase.
fn passages_trainable(model: &LinearEncoder, config: &TrainConfig) -> bool {
    model.phase == 1 || !config.freeze_passage_encoder
}

/// Encodes one batch, accumulates loss gradients and returns
/// `(loss sum, instances, denominator sum, passage slots for the bank)`.
/// Instances without any negative are skipped.
#[allow(clippy::type_complexity)]
fn batch_gradients(
    model: &LinearEncoder,
    batch: &[&TrainingExample],
    bank: Option<&MemoryBank>,
    config: &TrainConfig,
    ordered: bool,
    rng: Option<&mut ChaCha8Rng>,
    grads: Option<(&mut LinearGrad, Option<&mut LinearGrad>)>,
) -> Result<(f64, usize, usize, Vec<(String, Vec<f64>)>), TrainError> {
    let mut instances = Vec::new();
    let mut hard: Vec<Vec<&Passage>> = Vec::new();
    let mut rng = rng;
    for ex in batch {
        let expanded = match rng.as_deref_mut() {
            Some(r) => training_instances(ex, ordered, r),
            None => training_instances(ex, true, &mut ChaCha8Rng::seed_from_u64(0)),
        };
        for inst in expanded {
            let h = config.hard_negatives_per_instance.min(ex.hard_negatives.len());
            let picked: Vec<&Passage> = match rng.as_deref_mut() {
                Some(r) => ex.hard_negatives.choose_multiple(r, h).collect(),
                None => ex.hard_negatives.iter().take(h).collect(),
            };
            instances.push(inst);
            hard.push(picked);
        }
    }
    let n = instances.len();
    if n == 0 {
        return Ok((0.0, 0, 0, Vec::new()));
    }

    let mut q_feats = Vec::with_capacity(n);
    let mut q_fwd = Vec::with_capacity(n);
    for inst in &instances {
        let text = inst.with_query_input(|q| render_query(q, model.max_query_chars).text);
        let f = model.features(&text)?;
        q_fwd.push(model.query.forward(&f)?);
        q_feats.push(f);
    }
    let mut slots: Vec<Slot> = Vec::new();
    for inst in &instances {
        slots.push(encode_slot(model, &inst.positive)?);
    }
    let mut hard_slots = Vec::with_capacity(n);
    for h in &hard {
        let mut ids = Vec::with_capacity(h.len());
        for p in h {
            ids.push(slots.len());
            slots.push(encode_slot(model, p)?);
        }
        hard_slots.push(ids);
    }

    let logit_scale = config.effective_logit_scale();
    let mut loss_sum = 0.0;
    let mut scored = 0;
    let mut denom_sum = 0;
    let mut grad_q: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut grad_slot: Vec<Vec<f64>> = vec![Vec::new(); slots.len()];
    for i in 0..n {
        let pos_id = slots[i].passage.id.as_str();
        let neg_slots: Vec<usize> = (0..n)
            .filter(|&j| j != i)
            .chain(hard_slots[i].iter().copied())
            .filter(|&j| slots[j].passage.id != pos_id)
            .collect();
        let negs: Vec<&[f64]> = neg_slots.iter().map(|&j| slots[j].forward.output.as_slice()).collect();
        let bank_vecs: Vec<&[f64]> = bank
            .map(|b| b.iter().filter(|(id, _)| *id != pos_id).map(|(_, v)| v).collect())
            .unwrap_or_default();
        if negs.is_empty() && bank_vecs.is_empty() {
            grad_q.push(Vec::new());
            continue;
        }
        let scaled: Vec<f64> = q_fwd[i].output.iter().map(|v| v * logit_scale).collect();
        let out = contrastive_loss(&scaled, &slots[i].forward.output, &negs, &bank_vecs)?;
        loss_sum += out.loss;
        scored += 1;
        denom_sum += out.denominator_terms;
        grad_q.push(out.grad_query.iter().map(|g| g * logit_scale).collect());
        accumulate(&mut grad_slot[i], &out.grad_positive);
        for (&j, g) in neg_slots.iter().zip(&out.grad_negatives) {
            accumulate(&mut grad_slot[j], g);
        }
    }

    if let Some((qgrad, pgrad)) = grads {
        let scale = 1.0 / scored.max(1) as f64;
        for (i, g) in grad_q.iter().enumerate() {
            if g.is_empty() {
                continue;
            }
            let g: Vec<f64> = g.iter().map(|v| v * scale).collect();
            q_fwd[i].backward(&q_feats[i], &g, qgrad);
        }
        if passages_trainable(model, config) {
            let target = match pgrad {
                Some(p) => p,
                None => qgrad,
            };
            for (slot, g) in slots.iter().zip(&grad_slot) {
                if g.is_empty() {
                    continue;
                }
                let g: Vec<f64> = g.iter().map(|v| v * scale).collect();
                slot.forward.backward(&slot.features, &g, target);
            }
        }
    }
    let pushed = slots
        .iter()
        .map(|s| (s.passage.id.clone(), s.forward.output.clone()))
        .collect();
    Ok((loss_sum, scored, denom_sum, pushed))
}

fn accumulate(acc: &mut Vec<f64>, g: &[f64]) {
    if acc.is_empty() {
        acc.extend_from_slice(g);
    } else {
        acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
}

/// One pass over `data` in seeded random batches with an SGD step per batch.
///
/// When `bank` is given, the batch's passage vectors are pushed into it after
/// each step.
pub fn train_epoch(
    model: &mut LinearEncoder,
    data: &[PreparedExample],
    mut bank: Option<&mut MemoryBank>,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let d = model.dimension();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let split = !model.shared && passages_trainable(model, config) && model.passage.is_some();
    let mut loss_total = 0.0;
    let mut instances = 0;
    let mut denominators = 0;
    let mut batches = 0;
    for (b, chunk) in order.chunks(config.batch_size).enumerate() {
        let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &data[i]).collect();
        let mut qgrad = LinearGrad::zeros(d);
        let mut pgrad = split.then(|| LinearGrad::zeros(d));
        let (loss, n, denom, pushed) = batch_gradients(
            model,
            &batch,
            bank.as_deref(),
            config,
            config.ordered,
            Some(rng),
            Some((&mut qgrad, pgrad.as_mut())),
        )?;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite(format!("batch {b}: loss {loss}")));
        }
        let norm = (qgrad.norm_sq() + pgrad.as_ref().map_or(0.0, LinearGrad::norm_sq)).sqrt();
        if !norm.is_finite() {
            return Err(TrainError::NonFinite(format!("batch {b}: gradient norm {norm}")));
        }
        if norm > config.gradient_clip_norm {
            let f = config.gradient_clip_norm / norm;
            qgrad.scale(f);
            if let Some(p) = pgrad.as_mut() {
                p.scale(f);
            }
        }
        model.query.apply_sgd(&qgrad, config.learning_rate);
        if let (Some(p), Some(pe)) = (pgrad.as_ref(), model.passage.as_mut()) {
            pe.apply_sgd(p, config.learning_rate);
        }
        if let Some(bank) = bank.as_deref_mut() {
            for (id, v) in pushed {
                bank.push(id, v);
            }
        }
        loss_total += loss;
        instances += n;
        denominators += denom;
        batches += 1;
    }
    Ok(EpochStats {
        mean_loss: loss_total / instances.max(1) as f64,
        instances,
        batches,
        mean_denominator: denominators as f64 / instances.max(1) as f64,
    })
}

/// Mean loss over fixed batches with stored positive order, first hard
/// negatives, and no bank.
fn heldout_loss(model: &LinearEncoder, data: &[PreparedExample], config: &TrainConfig) -> Result<f64, TrainError> {
    let refs: Vec<&TrainingExample> = data.iter().collect();
    let mut total = 0.0;
    let mut count = 0;
    for chunk in refs.chunks(config.batch_size) {
        let (loss, n, _, _) = batch_gradients(model, chunk, None, config, true, None, None)?;
        total += loss;
        count += n;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

fn heldout_r2(model: &LinearEncoder, corpus: &Corpus, records: &[EvalRecord], hops: usize, beam: usize) -> Result<Option<f64>, TrainError> {
    if records.is_empty() {
        return Ok(None);
    }
    let vectors = corpus
        .passages()
        .par_iter()
        .map(|p| model.encode_passage(p))
        .collect::<Result<Vec<_>, _>>()?;
    let ids = corpus.passages().iter().map(|p| p.id.clone()).collect();
    let index = FlatIndex::from_vectors(&vectors, ids)?;
    let cfg = EvalConfig {
        k_list: vec![hops],
        beam: BeamConfig {
            hops,
            beam_width: beam,
            k_out: 1,
            ..BeamConfig::default()
        },
        ..EvalConfig::default()
    };
    let report = evaluate(records, corpus, &index, model, &cfg, None, None)?;
    Ok(report.recall_at.get(&hops).copied())
}

fn union_corpus(examples: &[TrainingExample]) -> Result<Corpus, TrainError> {
    let mut seen = BTreeSet::new();
    let mut passages = Vec::new();
    for ex in examples {
        for p in ex.positives.iter().chain(&ex.hard_negatives) {
            if seen.insert(p.id.clone()) {
                passages.push(p.clone());
            }
        }
    }
    Ok(Corpus::from_passages(passages)?)
}

struct Checkpoint {
    model: LinearEncoder,
    epoch: usize,
    r2: Option<f64>,
}

/// Two-phase training.
///
/// Phase 1 trains the (shared or split) encoder until the held-out loss stops
/// improving for `patience` epochs, then restores the best-loss parameters.
/// Phase 2, with the memory bank on, freezes a passage-encoder copy, starts
/// an empty bank and trains the query side with the rest of the epoch budget;
/// the parameters with the best held-out R@2 (phase-1 result included) are
/// kept. Without a corpus, the passages found in the examples form the
/// retrieval and mining pool.
pub fn train(examples: &[TrainingExample], corpus: Option<&Corpus>, config: &TrainConfig) -> Result<TrainedModel, TrainError> {
    config.validate()?;
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let owned_corpus;
    let pool = match corpus {
        Some(c) => c,
        None => {
            owned_corpus = union_corpus(examples)?;
            &owned_corpus
        }
    };

    let mut unresolved = 0;
    let mut prepared: Vec<PreparedExample> = Vec::with_capacity(examples.len());
    for ex in examples {
        let mut ex = if config.ordered && ex.positives.len() == 2 {
            let o = order_positives(ex)?;
            unresolved += usize::from(o.heuristic_unresolved);
            o
        } else {
            ex.clone()
        };
        if !config.use_hard_negatives {
            ex.hard_negatives.clear();
        } else if ex.hard_negatives.is_empty() {
            ex.hard_negatives = mine_hard_negatives(pool, &ex, config.hard_negative_depth, config.use_linked_negatives);
        }
        prepared.push(ex);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((prepared.len() as f64) * config.validation_fraction).floor() as usize;
    let n_val = n_val.min(prepared.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut val_idx = val_idx.to_vec();
    let mut train_idx = train_idx.to_vec();
    val_idx.sort_unstable();
    train_idx.sort_unstable();
    let train_set: Vec<PreparedExample> = train_idx.iter().map(|&i| prepared[i].clone()).collect();
    let val_set: Vec<PreparedExample> = val_idx.iter().map(|&i| prepared[i].clone()).collect();
    let hops = prepared.iter().map(|e| e.positives.len()).max().unwrap_or(1);
    let val_records: Vec<EvalRecord> = val_set
        .iter()
        .map(|e| EvalRecord {
            question: e.question.clone(),
            answer: e.answer.clone(),
            gold_ids: e.positives.iter().map(|p| p.id.clone()).collect(),
            qtype: e.qtype.clone(),
        })
        .collect();
    let monitor = |m: &LinearEncoder, stats: &EpochStats| -> Result<(f64, Option<f64>), TrainError> {
        let loss = if val_set.is_empty() {
            stats.mean_loss
        } else {
            heldout_loss(m, &val_set, config)?
        };
        Ok((loss, heldout_r2(m, pool, &val_records, hops, config.validation_beam)?))
    };

    let mut model = LinearEncoder::identity(config.dimension, config.shared_encoder)?;
    let mut log = Vec::new();

    let mut best_loss = f64::INFINITY;
    let mut best = Checkpoint {
        model: model.clone(),
        epoch: 0,
        r2: None,
    };
    let mut stale = 0;
    let mut epoch = 0;
    while epoch < config.phase_one_epochs() {
        epoch += 1;
        let stats = train_epoch(&mut model, &train_set, None, config, &mut rng)?;
        let (loss, r2) = monitor(&model, &stats)?;
        log.push(EpochLog {
            epoch,
            phase: 1,
            train_loss: stats.mean_loss,
            heldout_loss: loss,
            heldout_r2: r2,
            bank_size: 0,
            mean_denominator: stats.mean_denominator,
        });
        if loss < best_loss {
            best_loss = loss;
            best = Checkpoint {
                model: model.clone(),
                epoch,
                r2,
            };
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    model = best.model.clone();

    if config.use_memory_bank {
        model.phase = 2;
        if config.freeze_passage_encoder {
            model.passage = Some(model.passage_embedder().clone());
        }
        best.model = model.clone();
        let mut bank = MemoryBank::new(config.bank_capacity);
        let mut best_loss = f64::INFINITY;
        let mut stale = 0;
        while epoch < config.epochs {
            epoch += 1;
            let stats = train_epoch(&mut model, &train_set, Some(&mut bank), config, &mut rng)?;
            let (loss, r2) = monitor(&model, &stats)?;
            log.push(EpochLog {
                epoch,
                phase: 2,
                train_loss: stats.mean_loss,
                heldout_loss: loss,
                heldout_r2: r2,
                bank_size: bank.len(),
                mean_denominator: stats.mean_denominator,
            });
            let better = match (r2, best.r2) {
                (Some(a), Some(b)) => a > b,
                (Some(_), None) => true,
                (None, _) => val_records.is_empty(),
            };
            if better {
                best = Checkpoint {
                    model: model.clone(),
                    epoch,
                    r2,
                };
            }
            if loss < best_loss {
                best_loss = loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }
        model = best.model;
    }

    Ok(TrainedModel {
        log: TrainingLog {
            config: config.clone(),
            train_examples: train_set.len(),
            validation_examples: val_set.len(),
            unresolved_order: unresolved,
            epochs: log,
            selected_epoch: best.epoch,
            final_phase: model.phase,
            heldout_r2: best.r2,
        },
        encoder: model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(i: usize, hard: usize) -> TrainingExample {
        TrainingExample {
            question: format!("question number {i}"),
            answer: format!("a{i}"),
            positives: vec![Passage::new(format!("p{i}"), format!("T{i}"), format!("text a{i} body"))],
            hard_negatives: (0..hard)
                .map(|h| Passage::new(format!("h{i}-{h}"), "H", format!("hard {i} {h}")))
                .collect(),
            qtype: None,
            heuristic_unresolved: false,
        }
    }

    #[test]
    fn denominator_counts() {
        let model = LinearEncoder::identity(16, true).unwrap();
        let cfg = TrainConfig {
            hard_negatives_per_instance: 1,
            ..TrainConfig::default()
        };
        let one = [&ex(0, 1)];
        let (_, n, denom, _) = batch_gradients(&model, &one, None, &cfg, true, None, None).unwrap();
        assert_eq!((n, denom), (1, 2));

        let mut bank = MemoryBank::new(2048);
        for i in 0..100 {
            bank.push(format!("bank{i}"), vec![0.1; 16]);
        }
        let four: Vec<TrainingExample> = (0..4).map(|i| ex(i, 1)).collect();
        let refs: Vec<&TrainingExample> = four.iter().collect();
        let (_, n, denom, _) = batch_gradients(&model, &refs, Some(&bank), &cfg, true, None, None).unwrap();
        assert_eq!(n, 4);
        assert_eq!(denom, 4 * 105);
    }

    #[test]
    fn epoch_is_seeded() {
        let data: Vec<TrainingExample> = (0..10).map(|i| ex(i, 2)).collect();
        let cfg = TrainConfig {
            batch_size: 4,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = LinearEncoder::identity(16, true).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            train_epoch(&mut m, &data, None, &cfg, &mut rng).unwrap();
            m
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_ne!(a, LinearEncoder::identity(16, true).unwrap());
    }

    #[test]
    fn single_phase_without_bank() {
        let data: Vec<TrainingExample> = (0..20).map(|i| ex(i, 1)).collect();
        let cfg = TrainConfig {
            dimension: 16,
            epochs: 3,
            use_memory_bank: false,
            ..TrainConfig::default()
        };
        let out = train(&data, None, &cfg).unwrap();
        assert_eq!(out.encoder.phase, 1);
        assert!(out.log.epochs.iter().all(|e| e.phase == 1));
        assert!(matches!(train(&[], None, &cfg), Err(TrainError::EmptyDataset)));
        let zero = TrainConfig { epochs: 0, ..cfg };
        assert!(matches!(train(&data, None, &zero), Err(TrainError::InvalidConfig(_))));
    }
}
