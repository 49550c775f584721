use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::siphash::{siphash64, SipKey};
use crate::embed_store::Corpus;
use crate::{Error, Result};

/// Number of score strata: [0, 0.1), [0.1, 0.2), ..., [0.9, 1.0].
pub const STRATA: usize = 10;

/// Maps a probability to its stratum; 1.0 falls in the top one.
pub fn stratify(score: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&score) {
        return Err(Error::OutOfRange { what: "score", detail: format!("{score} not in [0, 1]") });
    }
    Ok(((score * STRATA as f64).floor() as usize).min(STRATA - 1))
}

/// One model's probability for every row of the test corpus, in row order.
#[derive(Debug, Clone)]
pub struct ModelScores {
    pub model_id: String,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub id: u64,
    pub url: String,
    pub stratum: usize,
    pub model: String,
}

/// Entries sorted by id, unique by id. `labels` is filled in after rating.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalSet {
    pub entries: Vec<EvalEntry>,
    pub labels: Option<Vec<bool>>,
}

impl EvalSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.id).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| crate::error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| crate::error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| crate::error::io(path, e))?;
        let mut entries = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            entries.push(serde_json::from_str(line).map_err(|e| crate::error::json("eval set entry", e))?);
        }
        Ok(Self { entries, labels: None })
    }
}

/// Builds the stratified eval set: for each model, bucket every test item by
/// score and keep the `per_stratum` items whose URLs hash lowest under `key`.
/// When several models pick the same item, the first model in `models` is
/// recorded as its contributor.
pub fn build_eval_set(models: &[ModelScores], test: &Corpus, per_stratum: usize, key: SipKey) -> Result<EvalSet> {
    if models.is_empty() {
        return Err(Error::Empty("model list"));
    }
    if test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let hashes: Vec<(u64, u64)> =
        test.items().iter().map(|it| (siphash64(key, it.url.as_bytes()), it.id)).collect();

    let mut merged: BTreeMap<u64, EvalEntry> = BTreeMap::new();
    for model in models {
        if model.scores.len() != test.len() {
            return Err(Error::IdCountMismatch { ids: test.len(), rows: model.scores.len() });
        }
        let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); STRATA];
        for (row, &s) in model.scores.iter().enumerate() {
            buckets[stratify(s)?].push(row);
        }
        for (stratum, mut rows) in buckets.into_iter().enumerate() {
            let take = per_stratum.min(rows.len());
            if take == 0 {
                continue;
            }
            if take < rows.len() {
                rows.select_nth_unstable_by_key(take - 1, |&r| hashes[r]);
                rows.truncate(take);
            }
            for r in rows {
                let item = &test.items()[r];
                merged.entry(item.id).or_insert_with(|| EvalEntry {
                    id: item.id,
                    url: item.url.clone(),
                    stratum,
                    model: model.model_id.clone(),
                });
            }
        }
    }
    Ok(EvalSet { entries: merged.into_values().collect(), labels: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed_store::{Corpus, EmbeddingMatrix, ItemRef};

    fn corpus(n: usize) -> Corpus {
        let vectors: Vec<f32> = (0..n).flat_map(|i| [1.0f32, i as f32 * 1e-3]).collect();
        let items = (0..n as u64).map(|id| ItemRef { id: id * 3 + 1, url: format!("https://img.example/{id}.jpg") });
        Corpus::new(EmbeddingMatrix::new(2, vectors).unwrap(), items.collect()).unwrap()
    }

    fn uniform_scores(n: usize) -> Vec<f64> {
        (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect()
    }

    #[test]
    fn stratum_bounds() {
        assert_eq!(stratify(0.05).unwrap(), 0);
        assert_eq!(stratify(0.95).unwrap(), 9);
        assert_eq!(stratify(1.0).unwrap(), 9);
        assert_eq!(stratify(0.0).unwrap(), 0);
        assert_eq!(stratify(0.1).unwrap(), 1);
        assert!(stratify(1.01).is_err());
        assert!(stratify(f64::NAN).is_err());
    }

    #[test]
    fn uniform_scores_fill_every_stratum() {
        let c = corpus(1000);
        let m = ModelScores { model_id: "m0".into(), scores: uniform_scores(1000) };
        let set = build_eval_set(std::slice::from_ref(&m), &c, 20, crate::eval_kit::DEFAULT_EVAL_KEY).unwrap();
        assert_eq!(set.len(), 200);
        for s in 0..STRATA {
            assert_eq!(set.entries.iter().filter(|e| e.stratum == s).count(), 20);
        }
        let dup = ModelScores { model_id: "m1".into(), ..m.clone() };
        let merged = build_eval_set(&[m, dup], &c, 20, crate::eval_kit::DEFAULT_EVAL_KEY).unwrap();
        assert_eq!(merged, set);
    }

    #[test]
    fn picks_lowest_hashes_per_stratum() {
        let c = corpus(400);
        let key = crate::eval_kit::DEFAULT_EVAL_KEY;
        let scores = uniform_scores(400);
        let set = build_eval_set(&[ModelScores { model_id: "m".into(), scores: scores.clone() }], &c, 20, key).unwrap();
        for s in 0..STRATA {
            let mut candidates: Vec<(u64, u64)> = c
                .items()
                .iter()
                .zip(&scores)
                .filter(|(_, &sc)| stratify(sc).unwrap() == s)
                .map(|(it, _)| (siphash64(key, it.url.as_bytes()), it.id))
                .collect();
            candidates.sort();
            let mut want: Vec<u64> = candidates[..20].iter().map(|c| c.1).collect();
            want.sort();
            let got: Vec<u64> = set.entries.iter().filter(|e| e.stratum == s).map(|e| e.id).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn sparse_bucket_contributes_what_it_has() {
        let c = corpus(107);
        let scores: Vec<f64> = (0..107).map(|i| if i < 7 { 0.95 } else { 0.15 }).collect();
        let set = build_eval_set(&[ModelScores { model_id: "m".into(), scores }], &c, 20, crate::eval_kit::DEFAULT_EVAL_KEY)
            .unwrap();
        assert_eq!(set.entries.iter().filter(|e| e.stratum == 9).count(), 7);
        assert_eq!(set.entries.iter().filter(|e| e.stratum == 1).count(), 20);
        assert_eq!(set.len(), 27);
    }

    #[test]
    fn rejects_empty_inputs() {
        let c = corpus(10);
        assert!(matches!(build_eval_set(&[], &c, 20, crate::eval_kit::DEFAULT_EVAL_KEY), Err(Error::Empty(_))));
    }

    #[test]
    fn jsonl_round_trip() {
        let c = corpus(300);
        let set = build_eval_set(&[ModelScores { model_id: "m".into(), scores: uniform_scores(300) }], &c, 5, crate::eval_kit::DEFAULT_EVAL_KEY)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("eval.jsonl");
        set.write(&p).unwrap();
        assert_eq!(EvalSet::read(&p).unwrap(), set);
        let first = set.to_jsonl().lines().next().unwrap().to_string();
        assert!(first.starts_with("{\"id\":"), "{first}");
    }
}
