use serde::{Deserialize, Serialize};

use super::TrainError;

/// Training hyperparameters. [`TrainConfig::default`] is the desk-scale setup
/// for the linear embedder; [`TrainConfig::full_scale`] records the values
/// used for transformer-scale training and is not used by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dimension: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Total epoch budget across both phases.
    pub epochs: usize,
    /// Epochs of the budget reserved for the memory-bank phase.
    pub bank_epochs: usize,
    pub seed: u64,
    pub shared_encoder: bool,
    pub use_memory_bank: bool,
    pub use_hard_negatives: bool,
    pub use_linked_negatives: bool,
    pub ordered: bool,
    pub gradient_clip_norm: f64,
    /// Multiplies every training logit; `None` means `1/sqrt(dimension)`.
    /// Ranking at search time is unaffected.
    pub logit_scale: Option<f64>,
    /// Epochs without held-out loss improvement before a phase stops.
    pub patience: usize,
    pub bank_capacity: usize,
    /// TF-IDF depth when mining hard negatives from a corpus.
    pub hard_negative_depth: usize,
    /// Hard negatives sampled per instance each epoch.
    pub hard_negatives_per_instance: usize,
    /// Fraction of examples held out for loss and R@2 monitoring.
    pub validation_fraction: f64,
    /// Beam width for held-out R@2.
    pub validation_beam: usize,
    /// Freeze a passage-encoder copy in phase 2 and train the query side only.
    pub freeze_passage_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dimension: 512,
            learning_rate: 0.05,
            batch_size: 16,
            epochs: 30,
            bank_epochs: 5,
            seed: 0,
            shared_encoder: true,
            use_memory_bank: true,
            use_hard_negatives: true,
            use_linked_negatives: true,
            ordered: true,
            gradient_clip_norm: 2.0,
            logit_scale: None,
            patience: 3,
            bank_capacity: 2048,
            hard_negative_depth: 8,
            hard_negatives_per_instance: 2,
            validation_fraction: 0.1,
            validation_beam: 5,
            freeze_passage_encoder: true,
        }
    }
}

impl TrainConfig {
    pub fn full_scale() -> Self {
        TrainConfig {
            dimension: 768,
            learning_rate: 2e-5,
            batch_size: 150,
            epochs: 50,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.dimension <= 1 {
            return bad("dimension must be at least 2");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.gradient_clip_norm.is_nan() || self.gradient_clip_norm <= 0.0 {
            return bad("gradient_clip_norm must be positive");
        }
        if matches!(self.logit_scale, Some(s) if !(s > 0.0 && s.is_finite())) {
            return bad("logit_scale must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if self.validation_beam == 0 {
            return bad("validation_beam must be at least 1");
        }
        Ok(())
    }

    pub fn effective_logit_scale(&self) -> f64 {
        self.logit_scale.unwrap_or(1.0 / (self.dimension as f64).sqrt())
    }

    /// Epoch cap of the shared-encoder phase.
    pub fn phase_one_epochs(&self) -> usize {
        self.epochs.saturating_sub(self.bank_epochs).max(1)
    }
}
