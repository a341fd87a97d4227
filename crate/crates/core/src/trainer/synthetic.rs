//! Generated 2-hop bridge task.
//!
//! Entities are split round-robin into one type per relation, and relation
//! `j` maps type `j` onto a shuffled tenth (at least one) of type `j + 1`
//! (wrapping), so about ten subjects share each object. A bridge entity then
//! shows up in many training chains instead of one. Every entity has exactly
//! one outgoing fact and one passage, titled by the entity:
//! "e042 [SEP] e017 is r2 of e042". The question for eI is
//! "what is rA of the rB of eI": follow rB from eI to the bridge, then rA.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{TrainError, TrainingExample};
use crate::corpus::{Corpus, Passage};
use crate::eval::EvalRecord;

#[derive(Debug)]
pub struct SyntheticTask {
    pub corpus: Corpus,
    pub train: Vec<TrainingExample>,
    pub dev: Vec<EvalRecord>,
}

const DEV_FRACTION: f64 = 0.2;
/// Subjects per object for each relation.
const FAN_IN: usize = 10;

pub fn generate_synthetic_task(num_entities: usize, num_relations: usize, seed: u64) -> Result<SyntheticTask, TrainError> {
    if num_relations < 1 {
        return Err(TrainError::TooSmall("at least 1 relation is needed".into()));
    }
    if num_entities < 3 || num_entities < num_relations {
        return Err(TrainError::TooSmall(format!(
            "{num_entities} entities for {num_relations} relations; need at least 3 and one per relation"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let types = num_relations;
    let width = (num_entities - 1).to_string().len().max(3);
    let name = |i: usize| format!("e{i:0width$}");
    let ty = |i: usize| i % types;
    let of_type: Vec<Vec<usize>> = (0..types)
        .map(|t| (0..num_entities).filter(|&i| ty(i) == t).collect())
        .collect();

    // value[i] = object of the single relation (number ty(i)) whose subject is i.
    let mut value = vec![0usize; num_entities];
    for j in 0..types {
        let src = &of_type[j];
        let dst = &of_type[(j + 1) % types];
        if types == 1 {
            // One type maps onto itself: a single shuffled cycle has no fixed point.
            let mut order = src.clone();
            order.shuffle(&mut rng);
            for k in 0..order.len() {
                value[order[k]] = order[(k + 1) % order.len()];
            }
        } else {
            let mut targets = dst.clone();
            targets.shuffle(&mut rng);
            targets.truncate(targets.len().div_ceil(FAN_IN));
            for (k, &i) in src.iter().enumerate() {
                value[i] = targets[k % targets.len()];
            }
        }
    }

    let passages: Vec<Passage> = (0..num_entities)
        .map(|i| {
            let x = value[i];
            let mut p = Passage::new(name(i), name(i), format!("{} is r{} of {}", name(x), ty(i), name(i)));
            p.meta = Some([("links".to_string(), name(x))].into_iter().collect());
            p
        })
        .collect();

    struct Q {
        question: String,
        answer: String,
        gold: [usize; 2],
    }
    let mut questions = Vec::new();
    for i in 0..num_entities {
        let b = value[i];
        let a = value[b];
        if a == i {
            continue;
        }
        questions.push(Q {
            question: format!("what is r{} of the r{} of {}", ty(b), ty(i), name(i)),
            answer: name(a),
            gold: [i, b],
        });
    }
    if questions.len() < 2 {
        return Err(TrainError::TooSmall(format!(
            "only {} answerable question(s); need 2 for a train/dev split",
            questions.len()
        )));
    }
    questions.shuffle(&mut rng);
    let n_dev = ((questions.len() as f64 * DEV_FRACTION).round() as usize).clamp(1, questions.len() - 1);
    let train_q = questions.split_off(n_dev);

    let dev = questions
        .into_iter()
        .map(|q| EvalRecord {
            question: q.question,
            answer: q.answer,
            gold_ids: q.gold.iter().map(|&g| name(g)).collect(),
            qtype: Some("bridge".into()),
        })
        .collect();
    let train = train_q
        .into_iter()
        .map(|q| {
            let mut positives: Vec<Passage> = q.gold.iter().map(|&g| passages[g].clone()).collect();
            positives.shuffle(&mut rng);
            TrainingExample {
                question: q.question,
                answer: q.answer,
                positives,
                hard_negatives: Vec::new(),
                qtype: Some("bridge".into()),
                heuristic_unresolved: false,
            }
        })
        .collect();
    Ok(SyntheticTask {
        corpus: Corpus::from_passages(passages)?,
        train,
        dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::order_positives;

    #[test]
    fn small_task_is_self_consistent() {
        let task = generate_synthetic_task(10, 2, 1).unwrap();
        assert!(!task.dev.is_empty() && !task.train.is_empty());
        for r in &task.dev {
            let gold: Vec<&Passage> = r.gold_ids.iter().map(|g| task.corpus.lookup(task.corpus.handle_of(g).unwrap()).unwrap()).collect();
            let ex = TrainingExample {
                question: r.question.clone(),
                answer: r.answer.clone(),
                positives: vec![gold[1].clone(), gold[0].clone()],
                hard_negatives: vec![],
                qtype: None,
                heuristic_unresolved: false,
            };
            let ordered = order_positives(&ex).unwrap();
            assert!(!ordered.heuristic_unresolved);
            assert_eq!(ordered.positives[0].id, r.gold_ids[0]);
            assert_eq!(ordered.positives[1].id, r.gold_ids[1]);
            // The hop-1 passage names the bridge entity that titles hop 2.
            assert!(gold[0].text.starts_with(&gold[1].title));
        }
    }

    #[test]
    fn seeded() {
        let a = generate_synthetic_task(30, 3, 5).unwrap();
        let b = generate_synthetic_task(30, 3, 5).unwrap();
        assert_eq!(a.corpus.passages(), b.corpus.passages());
        assert_eq!(a.train, b.train);
        assert_eq!(a.dev, b.dev);
        let c = generate_synthetic_task(30, 3, 6).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn degenerate_sizes_fail() {
        assert!(matches!(generate_synthetic_task(2, 1, 0), Err(TrainError::TooSmall(_))));
        assert!(matches!(generate_synthetic_task(10, 0, 0), Err(TrainError::TooSmall(_))));
        assert!(matches!(generate_synthetic_task(4, 5, 0), Err(TrainError::TooSmall(_))));
        assert_eq!(generate_synthetic_task(3, 3, 0).unwrap().corpus.len(), 3);
    }
}
