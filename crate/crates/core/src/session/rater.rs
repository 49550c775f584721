use std::collections::HashMap;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn from_bool(positive: bool) -> Self {
        if positive {
            Self::Positive
        } else {
            Self::Negative
        }
    }

    pub fn is_positive(self) -> bool {
        self == Self::Positive
    }
}

/// One rating as submitted by a rater.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingInput {
    pub item_id: u64,
    pub label: Label,
    pub rater_id: String,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

/// A rating as stored in the ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub item_id: u64,
    pub label: Label,
    pub rater_id: String,
    pub round: u32,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub idempotency_key: Option<String>,
}

/// The label an item received once all its votes were in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedLabel {
    pub item_id: u64,
    pub label: Label,
    pub round: u32,
    pub votes_positive: u32,
    pub votes_total: u32,
}

/// Majority label, or `None` on a tie.
pub fn majority_vote(votes: &[Label]) -> Option<Label> {
    let pos = votes.iter().filter(|l| l.is_positive()).count();
    let neg = votes.len() - pos;
    match pos.cmp(&neg) {
        std::cmp::Ordering::Greater => Some(Label::Positive),
        std::cmp::Ordering::Less => Some(Label::Negative),
        std::cmp::Ordering::Equal => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaterKind {
    HumanApi,
    Oracle,
}

/// Who answers a rating batch. Human raters answer through the API; an
/// oracle answers instantly from a ground-truth map, optionally as several
/// independent voters that each flip the truth with probability `noise`.
#[derive(Debug, Clone)]
pub struct RaterBinding {
    pub kind: RaterKind,
    pub votes_required: u32,
    pub rater_prefix: String,
    pub noise: f64,
    pub seed: u64,
    truth: Option<Arc<HashMap<u64, bool>>>,
}

impl RaterBinding {
    pub fn human(votes_required: u32) -> Result<Self> {
        check_votes(votes_required)?;
        Ok(Self { kind: RaterKind::HumanApi, votes_required, rater_prefix: "user".into(), noise: 0.0, seed: 0, truth: None })
    }

    /// A single noise-free oracle voter.
    pub fn oracle(truth: Arc<HashMap<u64, bool>>) -> Self {
        Self { kind: RaterKind::Oracle, votes_required: 1, rater_prefix: "oracle".into(), noise: 0.0, seed: 0, truth: Some(truth) }
    }

    /// `votes_required` oracle voters named `crowd-0`, `crowd-1`, ...
    pub fn crowd(truth: Arc<HashMap<u64, bool>>, votes_required: u32, noise: f64, seed: u64) -> Result<Self> {
        check_votes(votes_required)?;
        if !(0.0..=1.0).contains(&noise) {
            return Err(Error::InvalidConfig(format!("noise {noise} not in [0, 1]")));
        }
        Ok(Self { kind: RaterKind::Oracle, votes_required, rater_prefix: "crowd".into(), noise, seed, truth: Some(truth) })
    }

    pub fn truth(&self) -> Option<&HashMap<u64, bool>> {
        self.truth.as_deref()
    }

    /// Errors with the first id the oracle cannot answer.
    pub fn check_coverage(&self, ids: impl IntoIterator<Item = u64>) -> Result<()> {
        if let Some(truth) = &self.truth {
            if let Some(id) = ids.into_iter().find(|id| !truth.contains_key(id)) {
                return Err(Error::OracleGap(id));
            }
        }
        Ok(())
    }

    pub fn rater_id(&self, voter: u32) -> String {
        if self.votes_required == 1 {
            self.rater_prefix.clone()
        } else {
            format!("{}-{voter}", self.rater_prefix)
        }
    }

    /// All votes for `items` in `round`. Human bindings produce nothing.
    pub fn rate(&self, items: &[u64], round: u32) -> Result<Vec<RatingInput>> {
        let Some(truth) = &self.truth else {
            return Ok(Vec::new());
        };
        let mut rng = crate::rng::stream(self.seed, "rater-noise", u64::from(round));
        let mut out = Vec::with_capacity(items.len() * self.votes_required as usize);
        for &item in items {
            let truth = *truth.get(&item).ok_or(Error::OracleGap(item))?;
            for voter in 0..self.votes_required {
                let flip = self.noise > 0.0 && rng.random::<f64>() < self.noise;
                out.push(RatingInput {
                    item_id: item,
                    label: Label::from_bool(truth ^ flip),
                    rater_id: self.rater_id(voter),
                    idempotency_key: None,
                });
            }
        }
        Ok(out)
    }
}

/// Even vote counts can tie, so they are rejected.
pub(crate) fn check_votes(votes_required: u32) -> Result<()> {
    if votes_required == 0 || votes_required.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!("votes_required must be odd, got {votes_required}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::*;

    #[test]
    fn majority_examples() {
        assert_eq!(majority_vote(&[Positive, Positive, Negative]), Some(Positive));
        assert_eq!(majority_vote(&[Negative, Positive, Negative]), Some(Negative));
        assert_eq!(majority_vote(&[Positive]), Some(Positive));
        assert_eq!(majority_vote(&[Positive, Negative]), None);
    }

    #[test]
    fn even_votes_rejected() {
        assert!(RaterBinding::human(2).is_err());
        assert!(RaterBinding::human(0).is_err());
        assert!(RaterBinding::human(3).is_ok());
    }

    fn truth() -> Arc<HashMap<u64, bool>> {
        Arc::new((0..100u64).map(|i| (i, i % 3 == 0)).collect())
    }

    #[test]
    fn oracle_answers_truth() {
        let o = RaterBinding::oracle(truth());
        let r = o.rate(&[0, 1, 3], 0).unwrap();
        assert_eq!(r.iter().map(|r| r.label).collect::<Vec<_>>(), [Positive, Negative, Positive]);
        assert!(r.iter().all(|r| r.rater_id == "oracle"));
        assert!(matches!(o.rate(&[500], 0), Err(Error::OracleGap(500))));
    }

    #[test]
    fn crowd_votes_and_noise() {
        let c = RaterBinding::crowd(truth(), 3, 0.0, 1).unwrap();
        let r = c.rate(&(0..10).collect::<Vec<_>>(), 6).unwrap();
        assert_eq!(r.len(), 30);
        assert_eq!(r[..3].iter().map(|r| r.rater_id.as_str()).collect::<Vec<_>>(), ["crowd-0", "crowd-1", "crowd-2"]);
        let noisy = RaterBinding::crowd(truth(), 1, 0.3, 2).unwrap();
        let ids: Vec<u64> = (0..100).collect();
        let flipped =
            noisy.rate(&ids, 0).unwrap().iter().filter(|r| r.label.is_positive() != (r.item_id % 3 == 0)).count();
        assert!((15..=45).contains(&flipped), "{flipped}");
        assert_eq!(noisy.rate(&ids, 0).unwrap(), noisy.rate(&ids, 0).unwrap());
    }

    #[test]
    fn label_serde_is_lowercase() {
        assert_eq!(serde_json::to_string(&Positive).unwrap(), "\"positive\"");
        let r: RatingInput = serde_json::from_str(r#"{"item_id":4,"label":"negative","rater_id":"u"}"#).unwrap();
        assert_eq!(r.idempotency_key, None);
    }
}
