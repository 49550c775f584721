use ndarray::Array2;
use rand::Rng;

use super::mlp::{Adam, MlpModel, Network};
use super::{MlpConfig, TrainingPool};
use crate::embed_store::Corpus;
use crate::{rng, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub examples_per_epoch: usize,
    pub steps: usize,
    /// Mean per-example loss of each epoch (with dropout active).
    pub epoch_losses: Vec<f64>,
    /// Share of positives in each epoch's sampled stream.
    pub epoch_positive_fraction: Vec<f64>,
}

/// Trains a fresh head on `pool`. See [`train_with_report`].
pub fn train(config: &MlpConfig, pool: &TrainingPool, corpus: &Corpus) -> Result<MlpModel> {
    train_with_report(config, pool, corpus).map(|(m, _)| m)
}

/// Trains a fresh head with Adam on a stream that, in expectation, is half
/// labeled positives, a quarter labeled negatives and a quarter random
/// negatives. Each source is sampled with replacement, so small labeled sets
/// are upsampled without materializing copies. Deterministic for a fixed
/// `config.seed`.
pub fn train_with_report(config: &MlpConfig, pool: &TrainingPool, corpus: &Corpus) -> Result<(MlpModel, TrainReport)> {
    config.validate()?;
    if !corpus.matrix().is_normalized() {
        return Err(Error::NotNormalized);
    }
    let rows = |ids: &[u64]| -> Result<Vec<usize>> {
        ids.iter().map(|&id| corpus.row_of(id).ok_or(Error::UnknownItem(id))).collect()
    };
    let sources = [rows(&pool.positives)?, rows(&pool.negatives)?, rows(&pool.random_negatives)?];
    let is_positive = [true, false, false];

    let mut weights = config.mixture.as_array();
    for (w, s) in weights.iter_mut().zip(&sources) {
        if s.is_empty() {
            *w = 0.0;
        }
    }
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Err(Error::Empty("training pool"));
    }
    let cumulative = [weights[0] / total, (weights[0] + weights[1]) / total];

    let examples_per_epoch = config.examples_per_epoch.unwrap_or_else(|| {
        let share = config.mixture.random_negatives;
        if share > 0.0 && !sources[2].is_empty() {
            (sources[2].len() as f64 / share).ceil() as usize
        } else {
            ((sources[0].len() + sources[1].len()) * 2).max(config.batch_size_sgd)
        }
    });

    let dim = corpus.dim();
    let matrix = corpus.matrix();
    let mut rng = rng::stream(config.seed, "train", 0);
    let mut net = Network::initialize(dim, &config.hidden_layers, &mut rng);
    let mut adam = Adam::new(&net, config.learning_rate, config.weight_decay);
    let mut report = TrainReport {
        examples_per_epoch,
        steps: 0,
        epoch_losses: Vec::with_capacity(config.epochs),
        epoch_positive_fraction: Vec::with_capacity(config.epochs),
    };

    let mut labels = Vec::with_capacity(config.batch_size_sgd);
    let mut picked = Vec::with_capacity(config.batch_size_sgd);
    for epoch in 0..config.epochs {
        let mut remaining = examples_per_epoch;
        let mut loss_sum = 0.0;
        let mut positives = 0usize;
        let mut step = 0;
        while remaining > 0 {
            let n = remaining.min(config.batch_size_sgd);
            remaining -= n;
            labels.clear();
            picked.clear();
            for _ in 0..n {
                let u: f64 = rng.random();
                let src = if u < cumulative[0] {
                    0
                } else if u < cumulative[1] {
                    1
                } else {
                    2
                };
                let list = &sources[src];
                picked.push(list[rng.random_range(0..list.len())]);
                labels.push(is_positive[src]);
            }
            positives += labels.iter().filter(|&&y| y).count();
            let x = Array2::from_shape_fn((n, dim), |(r, c)| f64::from(matrix.row(picked[r])[c]));
            let cache = net.forward_train(x, config.dropout_rate, &mut rng);
            let (loss, grads) = net.backward(&cache, &labels);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            loss_sum += loss * n as f64;
            adam.step(&mut net, &grads);
            step += 1;
            report.steps += 1;
        }
        if examples_per_epoch > 0 {
            report.epoch_losses.push(loss_sum / examples_per_epoch as f64);
            report.epoch_positive_fraction.push(positives as f64 / examples_per_epoch as f64);
        }
    }
    let model = net.to_model(config.clone(), 0);
    if model.layers.iter().any(|l| l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteLoss { epoch: config.epochs, step: 0 });
    }
    Ok((model, report))
}
