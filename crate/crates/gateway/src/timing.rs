//! Per-stage wall-clock measurements of the interactive loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use agile_core::active_learner::{score_corpus, select_margin};
use agile_core::concept_head::{assemble_pool, train, LabeledItem, MlpConfig, MlpModel};
use agile_core::embed_store::Corpus;
use agile_core::Result;

/// Budget for scoring plus margin selection over one million vectors.
pub const SCORING_BUDGET_SECS: f64 = 30.0;
/// Budget for one training run over a 100k-example stream.
pub const TRAINING_BUDGET_SECS: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub corpus_items: usize,
    pub dim: usize,
    pub threads: usize,
    pub hidden_layers: Vec<usize>,
    pub scoring_secs: f64,
    pub selection_secs: f64,
    pub vectors_per_sec: f64,
    pub vectors_per_sec_per_core: f64,
    pub training_examples: usize,
    pub training_secs: f64,
    pub batch_size: usize,
}

/// Scores the corpus with `model`, selects a margin batch and, when
/// `training_examples > 0`, trains a fresh head with the same architecture
/// on a stream of that many examples.
pub fn timing_probe(corpus: &Corpus, model: &MlpModel, batch_size: usize, training_examples: usize) -> Result<TimingReport> {
    let threads = rayon::current_num_threads();
    let mut report = TimingReport {
        corpus_items: corpus.len(),
        dim: corpus.dim(),
        threads,
        hidden_layers: model.hidden_layers(),
        scoring_secs: 0.0,
        selection_secs: 0.0,
        vectors_per_sec: 0.0,
        vectors_per_sec_per_core: 0.0,
        training_examples: 0,
        training_secs: 0.0,
        batch_size,
    };
    if corpus.is_empty() {
        return Ok(report);
    }
    let t = Instant::now();
    let scores = score_corpus(model, corpus, &[])?;
    report.scoring_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let picked = select_margin(&scores, batch_size);
    report.selection_secs = t.elapsed().as_secs_f64();
    let total = report.scoring_secs + report.selection_secs;
    report.vectors_per_sec = corpus.len() as f64 / total.max(1e-9);
    report.vectors_per_sec_per_core = report.vectors_per_sec / threads as f64;

    if training_examples > 0 && corpus.len() >= 4 {
        // alternate labels over the selected batch so both classes exist
        let mut labels: Vec<LabeledItem> =
            picked.iter().enumerate().map(|(i, &id)| LabeledItem { id, positive: i % 2 == 0 }).collect();
        if labels.len() < 2 {
            labels = corpus.ids().take(2).enumerate().map(|(i, id)| LabeledItem { id, positive: i == 0 }).collect();
        }
        let epochs = 10;
        let config = MlpConfig {
            hidden_layers: model.hidden_layers(),
            epochs,
            examples_per_epoch: Some(training_examples.div_ceil(epochs)),
            random_negative_count: training_examples.div_ceil(epochs) / 4,
            ..model.config.clone()
        };
        let t = Instant::now();
        let pool = assemble_pool(&labels, corpus, config.seed, config.random_negative_count)?;
        train(&config, &pool, corpus)?;
        report.training_secs = t.elapsed().as_secs_f64();
        report.training_examples = config.examples_per_epoch.unwrap_or(0) * epochs;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use agile_core::embed_store::EmbeddingMatrix;

    #[test]
    fn empty_corpus_is_zero_work() {
        let corpus = Corpus::new(EmbeddingMatrix::empty(8), vec![]).unwrap();
        let model = MlpModel::initialize(8, &MlpConfig::active_round(), &mut agile_core::rng::seeded(1));
        let r = timing_probe(&corpus, &model, 100, 1000).unwrap();
        assert_eq!((r.scoring_secs, r.training_secs, r.training_examples), (0.0, 0.0, 0));
        assert_eq!(r.corpus_items, 0);
    }

    #[test]
    fn schema_is_stable() {
        let corpus = agile_core::synthetic::clustered_corpus(2000, 16, 4, 0.3, 1);
        let model = MlpModel::initialize(16, &MlpConfig::active_round(), &mut agile_core::rng::seeded(1));
        let r = timing_probe(&corpus, &model, 100, 2000).unwrap();
        let keys = |r: &TimingReport| -> Vec<String> {
            serde_json::to_value(r).unwrap().as_object().unwrap().keys().cloned().collect()
        };
        assert_eq!(keys(&r), keys(&timing_probe(&corpus, &model, 10, 0).unwrap()));
        assert_eq!(r.training_examples, 2000);
        assert!(r.vectors_per_sec > 0.0);
    }
}
