use std::collections::HashSet;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::embed_store::Corpus;
use crate::{rng, Error, Result};

/// A resolved binary label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledItem {
    pub id: u64,
    pub positive: bool,
}

/// The three example sources the training stream mixes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPool {
    pub positives: Vec<u64>,
    pub negatives: Vec<u64>,
    /// Unlabeled images treated as negatives.
    pub random_negatives: Vec<u64>,
    /// Set when fewer unlabeled images existed than were requested.
    pub random_negatives_clamped: bool,
}

impl TrainingPool {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len() + self.random_negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits resolved labels by class and draws `random_negative_count` corpus
/// items that carry no label, uniformly without replacement.
///
/// If an id is labeled more than once, the first label wins.
pub fn assemble_pool(
    labels: &[LabeledItem],
    corpus: &Corpus,
    seed: u64,
    random_negative_count: usize,
) -> Result<TrainingPool> {
    let mut seen = HashSet::with_capacity(labels.len());
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for l in labels {
        if corpus.row_of(l.id).is_none() {
            return Err(Error::UnknownItem(l.id));
        }
        if seen.insert(l.id) {
            if l.positive {
                positives.push(l.id);
            } else {
                negatives.push(l.id);
            }
        }
    }
    if positives.is_empty() {
        return Err(Error::MissingClass("positive"));
    }
    if negatives.is_empty() {
        return Err(Error::MissingClass("negative"));
    }

    let unlabeled: Vec<u64> = corpus.ids().filter(|id| !seen.contains(id)).collect();
    let take = random_negative_count.min(unlabeled.len());
    let clamped = take < random_negative_count;
    if clamped {
        log::warn!(
            "requested {random_negative_count} random negatives but only {} unlabeled items exist",
            unlabeled.len()
        );
    }
    let mut rng = rng::stream(seed, "random-negatives", 0);
    let random_negatives = sample(&mut rng, unlabeled.len(), take).into_iter().map(|i| unlabeled[i]).collect();
    Ok(TrainingPool { positives, negatives, random_negatives, random_negatives_clamped: clamped })
}
