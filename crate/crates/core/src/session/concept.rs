use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::ann_index::{NnIndex, Probe};
use crate::embed_store::NORM_TOLERANCE;
use crate::{Error, Result};

/// Maps text to a unit vector in the image embedding space.
pub trait TextEmbedder {
    fn dim(&self) -> usize;
    fn embed(&self, phrase: &str) -> Vec<f32>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSpec {
    pub name: String,
    /// Always contains `name`.
    pub positive_phrases: Vec<String>,
    #[serde(default)]
    pub negative_phrases: Vec<String>,
    /// Unit vectors keyed by phrase text.
    #[serde(default)]
    pub phrase_embeddings: BTreeMap<String, Vec<f32>>,
}

impl ConceptSpec {
    /// Builds a spec, appending the concept name to the positive phrases
    /// when it is not already there.
    pub fn new(name: &str, positive_phrases: Vec<String>, negative_phrases: Vec<String>) -> Result<Self> {
        let mut spec = Self { name: name.to_string(), positive_phrases, negative_phrases, phrase_embeddings: BTreeMap::new() };
        spec.normalize_phrases();
        spec.check_phrases()?;
        Ok(spec)
    }

    fn normalize_phrases(&mut self) {
        if !self.positive_phrases.iter().any(|p| p == &self.name) {
            self.positive_phrases.push(self.name.clone());
        }
    }

    fn check_phrases(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::InvalidConfig("concept name is empty".into()));
        }
        if let Some(p) = self.phrases().find(|p| p.trim().is_empty()) {
            return Err(Error::InvalidConfig(format!("empty phrase {p:?}")));
        }
        Ok(())
    }

    /// Re-applies the name rule and checks every invariant, including
    /// embedding coverage and norm when `dim` is given.
    pub fn validate(&mut self, dim: Option<usize>) -> Result<()> {
        self.normalize_phrases();
        self.check_phrases()?;
        if let Some(dim) = dim {
            for (phrase, v) in &self.phrase_embeddings {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, actual: v.len() });
                }
                let norm = crate::embed_store::l2_norm(v);
                if (norm - 1.0).abs() > NORM_TOLERANCE {
                    return Err(Error::InvalidConfig(format!("embedding for {phrase:?} has norm {norm}")));
                }
            }
        }
        Ok(())
    }

    pub fn phrases(&self) -> impl Iterator<Item = &String> {
        self.positive_phrases.iter().chain(self.negative_phrases.iter())
    }

    /// Fills in embeddings for phrases that have none.
    pub fn embed_missing(&mut self, embedder: &dyn TextEmbedder) {
        let missing: Vec<String> = self.phrases().filter(|p| !self.phrase_embeddings.contains_key(*p)).cloned().collect();
        for p in missing {
            let v = embedder.embed(&p);
            self.phrase_embeddings.insert(p, v);
        }
    }

    pub fn embedding(&self, phrase: &str) -> Result<&[f32]> {
        self.phrase_embeddings
            .get(phrase)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::InvalidConfig(format!("no embedding for phrase {phrase:?}")))
    }

    /// The text embedding used for zero-shot scoring.
    pub fn name_embedding(&self) -> Result<&[f32]> {
        self.embedding(&self.name)
    }
}

/// Pools the `per_phrase` nearest neighbours of every phrase, then draws
/// `sample` distinct ids uniformly from the pool. Returned ids ascend.
pub fn expand_concept(
    spec: &ConceptSpec,
    index: &NnIndex,
    per_phrase: usize,
    sample_size: usize,
    probe: Probe,
    seed: u64,
) -> Result<Vec<u64>> {
    let mut pool = BTreeSet::new();
    for phrase in spec.phrases() {
        for n in index.top_k(spec.embedding(phrase)?, per_phrase, probe)? {
            pool.insert(n.id);
        }
    }
    if pool.is_empty() {
        return Err(Error::Empty("neighbour pool"));
    }
    let pool: Vec<u64> = pool.into_iter().collect();
    let mut rng = crate::rng::stream(seed, "expand", 0);
    let mut picked: Vec<u64> =
        sample(&mut rng, pool.len(), sample_size.min(pool.len())).into_iter().map(|i| pool[i]).collect();
    picked.sort_unstable();
    Ok(picked)
}
