//! Corpus-wide scoring and rating-batch selection.
//!
//! For a binary head the margin |2p − 1|, the least-confidence score and the
//! entropy all induce the same uncertainty order, so only the margin is
//! computed.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept_head::MlpModel;
use crate::embed_store::Corpus;
use crate::{Error, Result};

/// Rows per scoring shard.
pub const SHARD_ROWS: usize = 65_536;
/// Rows per inference call within a shard.
const BLOCK_ROWS: usize = 1024;

/// Default share of a positive-mining batch drawn from the top of the
/// probability ranking.
pub const DEFAULT_MINING_FRACTION: f64 = 0.5;

/// Batch-size presets: small, medium and large.
pub const BATCH_PRESETS: [usize; 3] = [50, 100, 200];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub id: u64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginScore {
    pub id: u64,
    pub margin: f64,
}

impl MarginScore {
    pub fn of(item: ScoredItem) -> Self {
        Self { id: item.id, margin: margin(item.p) }
    }
}

pub fn margin(p: f64) -> f64 {
    (2.0 * p - 1.0).abs()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Margin,
    MarginPositiveMining,
    Random,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "margin" => Ok(Self::Margin),
            "margin_positive_mining" => Ok(Self::MarginPositiveMining),
            "random" => Ok(Self::Random),
            other => Err(Error::InvalidConfig(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub strategy: Strategy,
    pub batch_size: usize,
    /// Share of a positive-mining batch taken by highest probability.
    #[serde(default = "default_mining_fraction")]
    pub mining_fraction: f64,
    /// Sorted ascending, no duplicates.
    pub excluded: Vec<u64>,
    pub seed: u64,
}

fn default_mining_fraction() -> f64 {
    DEFAULT_MINING_FRACTION
}

impl SelectionPlan {
    pub fn new(strategy: Strategy, batch_size: usize, excluded: impl IntoIterator<Item = u64>, seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        let mut excluded: Vec<u64> = excluded.into_iter().collect();
        excluded.sort_unstable();
        excluded.dedup();
        Ok(Self { strategy, batch_size, mining_fraction: DEFAULT_MINING_FRACTION, excluded, seed })
    }

    pub fn is_excluded(&self, id: u64) -> bool {
        self.excluded.binary_search(&id).is_ok()
    }

    /// Runs the plan against the corpus. Random selection skips scoring.
    pub fn execute(&self, model: &MlpModel, corpus: &Corpus) -> Result<Vec<u64>> {
        match self.strategy {
            Strategy::Random => {
                let ids: Vec<u64> = corpus.ids().filter(|&id| !self.is_excluded(id)).collect();
                Ok(select_random(&ids, self.batch_size, self.seed))
            }
            Strategy::Margin => Ok(select_margin(&score_corpus(model, corpus, &self.excluded)?, self.batch_size)),
            Strategy::MarginPositiveMining => Ok(select_margin_positive_mining_with(
                &score_corpus(model, corpus, &self.excluded)?,
                self.batch_size,
                self.mining_fraction,
            )),
        }
    }
}

/// Scores every corpus item whose id is not in `excluded` (sorted ascending).
/// Output is in corpus row order regardless of how shards are scheduled.
pub fn score_corpus(model: &MlpModel, corpus: &Corpus, excluded: &[u64]) -> Result<Vec<ScoredItem>> {
    score_corpus_sharded(model, corpus, excluded, SHARD_ROWS)
}

pub fn score_corpus_sharded(
    model: &MlpModel,
    corpus: &Corpus,
    excluded: &[u64],
    shard_rows: usize,
) -> Result<Vec<ScoredItem>> {
    if model.input_dim() != corpus.dim() {
        return Err(Error::DimensionMismatch { expected: corpus.dim(), actual: model.input_dim() });
    }
    if shard_rows == 0 {
        return Err(Error::InvalidConfig("shard_rows must be positive".into()));
    }
    debug_assert!(excluded.windows(2).all(|w| w[0] < w[1]), "excluded ids must be sorted");
    let scorer = model.scorer();
    let dim = corpus.dim();
    let flat = corpus.matrix().as_slice();
    let items = corpus.items();
    let shards: Vec<Result<Vec<ScoredItem>>> = (0..corpus.len().div_ceil(shard_rows))
        .into_par_iter()
        .map(|s| {
            let start = s * shard_rows;
            let end = (start + shard_rows).min(corpus.len());
            let mut out = Vec::with_capacity(end - start);
            let mut probs = vec![0.0; BLOCK_ROWS];
            let mut b = start;
            while b < end {
                let e = (b + BLOCK_ROWS).min(end);
                let probs = &mut probs[..e - b];
                scorer.predict_rows(&flat[b * dim..e * dim], probs)?;
                for (item, &p) in items[b..e].iter().zip(probs.iter()) {
                    if excluded.binary_search(&item.id).is_err() {
                        out.push(ScoredItem { id: item.id, p });
                    }
                }
                b = e;
            }
            Ok(out)
        })
        .collect();
    let mut merged = Vec::with_capacity(corpus.len().saturating_sub(excluded.len()));
    for shard in shards {
        merged.extend(shard?);
    }
    Ok(merged)
}

fn by_margin(a: &ScoredItem, b: &ScoredItem) -> std::cmp::Ordering {
    margin(a.p).total_cmp(&margin(b.p)).then(a.id.cmp(&b.id))
}

fn by_probability_desc(a: &ScoredItem, b: &ScoredItem) -> std::cmp::Ordering {
    b.p.total_cmp(&a.p).then(a.id.cmp(&b.id))
}

/// The `k` smallest items under `cmp`, sorted.
fn smallest_k(scores: &[ScoredItem], k: usize, cmp: fn(&ScoredItem, &ScoredItem) -> std::cmp::Ordering) -> Vec<ScoredItem> {
    let mut v = scores.to_vec();
    let k = k.min(v.len());
    if k == 0 {
        return Vec::new();
    }
    if k < v.len() {
        v.select_nth_unstable_by(k - 1, cmp);
        v.truncate(k);
    }
    v.sort_by(cmp);
    v
}

/// The `batch_size` most uncertain items, ties by ascending id.
pub fn select_margin(scores: &[ScoredItem], batch_size: usize) -> Vec<u64> {
    smallest_k(scores, batch_size, by_margin).into_iter().map(|s| s.id).collect()
}

/// Half the batch by margin and half by highest probability.
pub fn select_margin_positive_mining(scores: &[ScoredItem], batch_size: usize) -> Vec<u64> {
    select_margin_positive_mining_with(scores, batch_size, DEFAULT_MINING_FRACTION)
}

/// `⌊batch · mining_fraction⌋` items by highest probability, the rest by
/// margin. Items picked by both are counted once and the shortfall is filled
/// from further down the margin ranking.
pub fn select_margin_positive_mining_with(scores: &[ScoredItem], batch_size: usize, mining_fraction: f64) -> Vec<u64> {
    let fraction = mining_fraction.clamp(0.0, 1.0);
    let n_mining = (batch_size as f64 * fraction).floor() as usize;
    let n_margin = batch_size - n_mining;
    let margin_rank = smallest_k(scores, batch_size, by_margin);
    let mining_rank = smallest_k(scores, n_mining, by_probability_desc);

    let mut chosen: Vec<u64> = margin_rank.iter().take(n_margin).map(|s| s.id).collect();
    let mut seen: std::collections::HashSet<u64> = chosen.iter().copied().collect();
    for s in &mining_rank {
        if seen.insert(s.id) {
            chosen.push(s.id);
        }
    }
    for s in margin_rank.iter().skip(n_margin) {
        if chosen.len() >= batch_size {
            break;
        }
        if seen.insert(s.id) {
            chosen.push(s.id);
        }
    }
    chosen
}

/// Uniform sample without replacement, in sampled order.
pub fn select_random(ids: &[u64], batch_size: usize, seed: u64) -> Vec<u64> {
    let k = batch_size.min(ids.len());
    let mut rng = crate::rng::stream(seed, "select-random", 0);
    sample(&mut rng, ids.len(), k).into_iter().map(|i| ids[i]).collect()
}

/// Writes `{"id", "p"}` lines for audit.
pub fn write_scores_jsonl(path: &Path, scores: &[ScoredItem]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| crate::error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    for s in scores {
        serde_json::to_writer(&mut w, s).map_err(|e| crate::error::json("score line", e))?;
        w.write_all(b"\n").map_err(|e| crate::error::io(path, e))?;
    }
    w.flush().map_err(|e| crate::error::io(path, e))
}
