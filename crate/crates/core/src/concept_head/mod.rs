//! The binary concept classifier head.
//!
//! Zero-shot scoring is a plain cosine between an image embedding and the
//! concept's text embedding. Trained heads are small rectified-linear MLPs on
//! the frozen embeddings with a logistic output, trained with Adam on a
//! stream mixing labeled positives (half), labeled negatives (a quarter) and
//! random unlabeled images auto-labeled negative (a quarter).

mod checkpoint;
mod mlp;
mod pool;
mod train;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use mlp::{gradient_check, predict, DenseLayer, GradientCheck, MlpModel, Scorer};
pub use pool::{assemble_pool, LabeledItem, TrainingPool};
pub use train::{train, train_with_report, TrainReport};

use crate::{Error, Result};

/// Hidden layout of the first-round head.
pub const INITIAL_HIDDEN: [usize; 1] = [16];
/// Hidden layout used for every active learning round and the final model.
pub const ACTIVE_HIDDEN: [usize; 3] = [128, 128, 128];
/// Random images auto-labeled negative at full corpus scale.
pub const DEFAULT_RANDOM_NEGATIVES: usize = 500_000;

/// Target share of each source in the training stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub positives: f64,
    pub labeled_negatives: f64,
    pub random_negatives: f64,
}

impl Default for Mixture {
    fn default() -> Self {
        Self { positives: 0.5, labeled_negatives: 0.25, random_negatives: 0.25 }
    }
}

impl Mixture {
    fn as_array(&self) -> [f64; 3] {
        [self.positives, self.labeled_negatives, self.random_negatives]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_layers: Vec<usize>,
    pub dropout_rate: f64,
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size_sgd: usize,
    pub seed: u64,
    pub random_negative_count: usize,
    pub mixture: Mixture,
    /// Length of one epoch's sampled stream. `None` sizes the epoch so that
    /// the random negatives fill their mixture share exactly once.
    pub examples_per_epoch: Option<usize>,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_layers: ACTIVE_HIDDEN.to_vec(),
            dropout_rate: 0.5,
            weight_decay: 1e-4,
            learning_rate: 1e-4,
            epochs: 10,
            batch_size_sgd: 256,
            seed: 0,
            random_negative_count: DEFAULT_RANDOM_NEGATIVES,
            mixture: Mixture::default(),
            examples_per_epoch: None,
        }
    }
}

impl MlpConfig {
    pub fn initial_round() -> Self {
        Self { hidden_layers: INITIAL_HIDDEN.to_vec(), ..Self::default() }
    }

    pub fn active_round() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers.contains(&0) {
            return Err(Error::InvalidConfig("hidden layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!("dropout {} not in [0, 1)", self.dropout_rate)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig("weight decay must be non-negative".into()));
        }
        if self.batch_size_sgd == 0 {
            return Err(Error::InvalidConfig("SGD batch size must be positive".into()));
        }
        let m = self.mixture.as_array();
        if m.iter().any(|&f| f.is_nan() || f < 0.0) || (m.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("mixture {m:?} must be non-negative and sum to 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbeddingFamily {
    ClipLike,
    AlignLike,
}

/// Decision threshold on cosine similarity for thresholded zero-shot metrics
/// (F1, accuracy). AUC metrics never use it.
pub fn zero_shot_threshold(family: EmbeddingFamily) -> f64 {
    match family {
        EmbeddingFamily::ClipLike => 0.28,
        EmbeddingFamily::AlignLike => 0.20,
    }
}

/// Cosine similarity of two unit vectors.
pub fn zero_shot_score(image: &[f32], text: &[f32]) -> Result<f64> {
    if image.len() != text.len() {
        return Err(Error::DimensionMismatch { expected: text.len(), actual: image.len() });
    }
    Ok(crate::ann_index::dot(image, text))
}

/// Decision threshold for a trained head's probability.
pub const MODEL_THRESHOLD: f64 = 0.5;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_shot_examples() {
        let a = [0.6f32, 0.8];
        assert!((zero_shot_score(&a, &a).unwrap() - 1.0).abs() < 1e-7);
        assert_eq!(zero_shot_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(zero_shot_score(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert!(zero_shot_score(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn thresholds() {
        assert_eq!(zero_shot_threshold(EmbeddingFamily::ClipLike), 0.28);
        assert_eq!(zero_shot_threshold(EmbeddingFamily::AlignLike), 0.20);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = MlpConfig::default();
        assert_eq!(c.hidden_layers, vec![128, 128, 128]);
        assert_eq!((c.dropout_rate, c.weight_decay, c.learning_rate, c.epochs), (0.5, 1e-4, 1e-4, 10));
        assert_eq!(c.random_negative_count, 500_000);
        assert_eq!(MlpConfig::initial_round().hidden_layers, vec![16]);
        c.validate().unwrap();
        let bad = MlpConfig { dropout_rate: 1.0, ..MlpConfig::default() };
        assert!(bad.validate().is_err());
        let bad = MlpConfig {
            mixture: Mixture { positives: 0.5, labeled_negatives: 0.5, random_negatives: 0.25 },
            ..MlpConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
