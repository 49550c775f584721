use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::concept::ConceptSpec;
use super::rater::RaterBinding;
use super::state::{RoundMetrics, Session, SessionConfig};
use crate::ann_index::NnIndex;
use crate::concept_head::{MlpModel, MODEL_THRESHOLD};
use crate::embed_store::Corpus;
use crate::eval_kit::MetricReport;
use crate::{Error, Result};

/// A labeled held-out split.
#[derive(Debug, Clone)]
pub struct EvalData {
    pub corpus: Arc<Corpus>,
    /// Aligned with corpus rows.
    pub labels: Vec<bool>,
}

impl EvalData {
    pub fn new(corpus: Arc<Corpus>, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != corpus.len() {
            return Err(Error::IdCountMismatch { ids: labels.len(), rows: corpus.len() });
        }
        Ok(Self { corpus, labels })
    }

    /// Labels the split from a ground-truth map.
    pub fn from_truth(corpus: Arc<Corpus>, truth: &std::collections::HashMap<u64, bool>) -> Result<Self> {
        let labels = corpus.ids().map(|id| truth.get(&id).copied().ok_or(Error::OracleGap(id))).collect::<Result<_>>()?;
        Self::new(corpus, labels)
    }

    pub fn scores(&self, model: &MlpModel) -> Result<Vec<f64>> {
        let all = crate::active_learner::score_corpus(model, &self.corpus, &[])?;
        Ok(all.into_iter().map(|s| s.p).collect())
    }

    pub fn report(&self, model: &MlpModel) -> Result<MetricReport> {
        MetricReport::compute(&self.labels, &self.scores(model)?, MODEL_THRESHOLD)
    }

    /// Metrics of cosine similarity to `text`, binarized at `threshold`.
    pub fn zero_shot_report(&self, text: &[f32], threshold: f64) -> Result<MetricReport> {
        let scores = self
            .corpus
            .matrix()
            .rows()
            .map(|row| crate::concept_head::zero_shot_score(row, text))
            .collect::<Result<Vec<_>>>()?;
        MetricReport::compute(&self.labels, &scores, threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub rounds: Vec<RoundMetrics>,
    pub zero_shot: Option<MetricReport>,
}

impl SimulationReport {
    pub fn final_auc_pr(&self) -> Option<f64> {
        self.rounds.last().and_then(|r| r.eval.as_ref()).and_then(|e| e.auc_pr)
    }

    pub fn auc_pr_at(&self, round: u32) -> Option<f64> {
        self.rounds.iter().find(|r| r.round == round).and_then(|r| r.eval.as_ref()).and_then(|e| e.auc_pr)
    }
}

/// Runs the whole loop with `oracle` answering every batch: expand, rate,
/// train, then `config.rounds` rounds of select, rate, train. Metrics are
/// computed on `eval` after every training.
pub fn simulate(
    concept: ConceptSpec,
    config: SessionConfig,
    oracle: &RaterBinding,
    index: &NnIndex,
    eval: &EvalData,
) -> Result<(Session, SimulationReport)> {
    oracle.check_coverage(index.corpus().ids())?;
    let corpus = index.corpus().clone();
    let family = config.embedding_family;
    let mut session = Session::new("simulation", concept, config)?;
    session.expand(index)?;
    loop {
        session.rate_pending(oracle)?;
        session.run_training(&corpus, Some(eval))?;
        if session.phase() == super::state::Phase::Done {
            break;
        }
        session.run_selection(&corpus)?;
    }
    let zero_shot = match session.state().concept.name_embedding() {
        Ok(text) => Some(eval.zero_shot_report(text, crate::concept_head::zero_shot_threshold(family))?),
        Err(_) => None,
    };
    let report = SimulationReport { rounds: session.state().metrics.clone(), zero_shot };
    Ok((session, report))
}
