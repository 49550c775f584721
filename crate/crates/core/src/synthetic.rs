//! Seeded synthetic corpora and a stand-in text embedder.
//!
//! The planted-concept corpus mimics the shape of a real concept search: a
//! concept cluster with a hidden attribute splitting it into positives and
//! negatives, a look-alike distractor cluster, and a large unrelated
//! background. Text phrases land near designated directions so expansion and
//! zero-shot scoring behave like a text tower would.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use std::sync::Arc;

use crate::ann_index::NnIndex;
use crate::concept_head::MlpConfig;
use crate::embed_store::{split, Corpus, EmbeddingMatrix, ItemRef, SplitAssignment};
use crate::error::{io, json};
use crate::eval_kit::{siphash64, SipKey};
use crate::session::{ConceptSpec, EvalData, RaterBinding, TextEmbedder};
use crate::Result;

fn gaussian(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    unit(&gaussian(rng, dim))
}

/// Removes the components of `v` along each of the unit vectors in `basis`.
fn orthogonalize(mut v: Vec<f64>, basis: &[&[f64]]) -> Vec<f64> {
    for b in basis {
        let d: f64 = v.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
        for (x, y) in v.iter_mut().zip(b.iter()) {
            *x -= d * y;
        }
    }
    unit(&v)
}

fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + s * y).collect()
}

fn to_f32_unit(v: &[f64]) -> Vec<f32> {
    unit(v).into_iter().map(|x| x as f32).collect()
}

fn synthetic_items(n: usize) -> Vec<ItemRef> {
    (0..n as u64).map(|id| ItemRef { id, url: format!("synthetic://item/{id}") }).collect()
}

/// Two Gaussian blobs centred at `±center_norm·u` for a random unit `u`,
/// with per-coordinate standard deviation `sigma`. Rows are not normalized;
/// the flag is true for the first blob.
pub fn two_gaussians(
    dim: usize,
    n_pos: usize,
    n_neg: usize,
    center_norm: f64,
    sigma: f64,
    seed: u64,
) -> (Vec<Vec<f32>>, Vec<bool>) {
    let mut rng = crate::rng::stream(seed, "two-gaussians", 0);
    let u = random_unit(&mut rng, dim);
    let mut rows = Vec::with_capacity(n_pos + n_neg);
    let mut labels = Vec::with_capacity(n_pos + n_neg);
    for i in 0..n_pos + n_neg {
        let sign = if i < n_pos { 1.0 } else { -1.0 };
        let g = gaussian(&mut rng, dim);
        rows.push(u.iter().zip(&g).map(|(c, z)| (sign * center_norm * c + sigma * z) as f32).collect());
        labels.push(i < n_pos);
    }
    (rows, labels)
}

/// `n` unit vectors drawn around `n_clusters` random centres, each point
/// `normalize(c + spread·g)` with `g ~ N(0, I/dim)`. Ids are `0..n`.
pub fn clustered_corpus(n: usize, dim: usize, n_clusters: usize, spread: f64, seed: u64) -> Corpus {
    let mut rng = crate::rng::stream(seed, "clustered", 0);
    let centers: Vec<Vec<f64>> = (0..n_clusters.max(1)).map(|_| random_unit(&mut rng, dim)).collect();
    let scale = spread / (dim as f64).sqrt();
    let mut vectors = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let c = &centers[rng.random_range(0..centers.len())];
        let g = gaussian(&mut rng, dim);
        vectors.extend(to_f32_unit(&axpy(c, scale, &g)));
    }
    let matrix = EmbeddingMatrix::new(dim, vectors).expect("finite");
    Corpus::new(matrix, synthetic_items(n)).expect("unique ids").normalized().expect("nonzero rows")
}

/// Isotropic unit vectors, for throughput measurements.
pub fn uniform_sphere_corpus(n: usize, dim: usize, seed: u64) -> Corpus {
    let mut rng = crate::rng::stream(seed, "sphere", 0);
    let mut vectors = Vec::with_capacity(n * dim);
    let mut row = vec![0f32; dim];
    for _ in 0..n {
        let mut sq = 0.0f64;
        for x in row.iter_mut() {
            let z: f32 = StandardNormal.sample(&mut rng);
            *x = z;
            sq += f64::from(z) * f64::from(z);
        }
        let inv = (1.0 / sq.sqrt()) as f32;
        vectors.extend(row.iter().map(|x| x * inv));
    }
    Corpus::new(EmbeddingMatrix::new(dim, vectors).expect("finite"), synthetic_items(n)).expect("unique ids")
}

/// Items per class in the separable fixture.
pub const FIXTURE_PER_CLASS: usize = 200;
const FIXTURE_DIM: usize = 8;
const FIXTURE_SIGMA: f64 = 0.1;

/// The 8-d separable fixture: 200 positives (ids `0..200`) and 200
/// negatives around antipodal centres 20σ apart, unit-normalized.
pub fn separable_fixture(seed: u64) -> Corpus {
    let (rows, _) = two_gaussians(FIXTURE_DIM, FIXTURE_PER_CLASS, FIXTURE_PER_CLASS, 1.0, FIXTURE_SIGMA, seed);
    let matrix = EmbeddingMatrix::new(FIXTURE_DIM, rows.concat()).expect("finite");
    Corpus::new(matrix, synthetic_items(2 * FIXTURE_PER_CLASS)).expect("unique ids").normalized().expect("nonzero rows")
}

/// A held-out draw from the same two blobs as [`separable_fixture`], with
/// the same id layout.
pub fn separable_holdout(seed: u64) -> Corpus {
    let mut rng = crate::rng::stream(seed, "two-gaussians", 0);
    let u = random_unit(&mut rng, FIXTURE_DIM);
    let mut noise = crate::rng::stream(seed, "two-gaussians-holdout", 0);
    let mut vectors = Vec::with_capacity(2 * FIXTURE_PER_CLASS * FIXTURE_DIM);
    for i in 0..2 * FIXTURE_PER_CLASS {
        let sign = if i < FIXTURE_PER_CLASS { 1.0 } else { -1.0 };
        let g = gaussian(&mut noise, FIXTURE_DIM);
        vectors.extend(u.iter().zip(&g).map(|(c, z)| (sign * c + FIXTURE_SIGMA * z) as f32));
    }
    let matrix = EmbeddingMatrix::new(FIXTURE_DIM, vectors).expect("finite");
    Corpus::new(matrix, synthetic_items(2 * FIXTURE_PER_CLASS)).expect("unique ids").normalized().expect("nonzero rows")
}

/// Positive labels for the separable fixture.
pub fn fixture_labels(corpus: &Corpus) -> Vec<bool> {
    corpus.ids().map(|id| id < FIXTURE_PER_CLASS as u64).collect()
}

/// The fixture's initial-round head with a stream long enough for the
/// constant learning rate to converge within 10 epochs.
pub fn fixture_training_config(seed: u64) -> MlpConfig {
    MlpConfig { seed, batch_size_sgd: 16, examples_per_epoch: Some(8000), ..MlpConfig::initial_round() }
}

pub fn fixture_positive_centroid(corpus: &Corpus) -> Vec<f32> {
    let dim = corpus.dim();
    let mut sum = vec![0.0f64; dim];
    for it in corpus.items().iter().filter(|it| it.id < FIXTURE_PER_CLASS as u64) {
        for (s, x) in sum.iter_mut().zip(corpus.vector(it.id).unwrap()) {
            *s += f64::from(*x);
        }
    }
    to_f32_unit(&sum)
}

/// Deterministic text embedder: a phrase maps to a hash-seeded perturbation
/// of its anchor direction, or of a hash-derived direction when it has none.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticTextEmbedder {
    pub dim: usize,
    pub seed: u64,
    /// Perturbation size relative to the unit anchor.
    pub spread: f64,
    pub anchors: BTreeMap<String, Vec<f32>>,
}

impl SyntheticTextEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed, spread: 0.1, anchors: BTreeMap::new() }
    }

    pub fn with_anchor(mut self, phrase: &str, direction: &[f64]) -> Self {
        self.anchors.insert(phrase.to_string(), to_f32_unit(direction));
        self
    }

    fn phrase_rng(&self, phrase: &str) -> crate::rng::Rng {
        let h = siphash64(SipKey { k0: self.seed, k1: !self.seed }, phrase.as_bytes());
        crate::rng::seeded(h)
    }
}

impl TextEmbedder for SyntheticTextEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, phrase: &str) -> Vec<f32> {
        let mut rng = self.phrase_rng(phrase);
        let base: Vec<f64> = match self.anchors.get(phrase) {
            Some(a) => a.iter().map(|&x| f64::from(x)).collect(),
            None => random_unit(&mut rng, self.dim),
        };
        let g = gaussian(&mut rng, self.dim);
        to_f32_unit(&axpy(&base, self.spread / (self.dim as f64).sqrt(), &g))
    }
}

/// Shape of a planted-concept corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub n_items: usize,
    pub dim: usize,
    pub background_clusters: usize,
    pub background_spread: f64,
    /// Fraction of items in the concept cluster; about half are positive.
    pub concept_share: f64,
    pub concept_spread: f64,
    /// Fraction of items in the look-alike cluster, all negative.
    pub distractor_share: f64,
    /// Positives satisfy `<x, v> > attribute_offset` for the hidden axis `v`.
    pub attribute_offset: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n_items: 100_000,
            dim: 32,
            background_clusters: 48,
            background_spread: 0.8,
            concept_share: 0.06,
            concept_spread: 0.8,
            distractor_share: 0.04,
            attribute_offset: 0.0,
            seed: 0,
        }
    }
}

/// A planted-concept corpus with its ground truth and a concept spec whose
/// phrases are already embedded.
#[derive(Debug, Clone)]
pub struct PlantedConcept {
    pub corpus: Corpus,
    pub truth: HashMap<u64, bool>,
    pub concept: ConceptSpec,
    pub embedder: SyntheticTextEmbedder,
}

impl PlantedConcept {
    pub fn positive_rate(&self) -> f64 {
        self.truth.values().filter(|&&p| p).count() as f64 / self.truth.len().max(1) as f64
    }

    /// Writes `embeddings.bin`, `ids.jsonl`, `truth.jsonl` and `concept.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        self.corpus.write(&dir.join("embeddings.bin"), &dir.join("ids.jsonl"))?;
        write_truth(&dir.join("truth.jsonl"), &self.truth)?;
        let p = dir.join("concept.json");
        let body = serde_json::to_vec_pretty(&self.concept).map_err(|e| json("concept", e))?;
        std::fs::write(&p, body).map_err(|e| io(&p, e))
    }
}

#[derive(Serialize, Deserialize)]
struct TruthLine {
    id: u64,
    label: bool,
}

pub fn write_truth(path: &Path, truth: &HashMap<u64, bool>) -> Result<()> {
    let mut ids: Vec<(&u64, &bool)> = truth.iter().collect();
    ids.sort();
    let mut out = String::new();
    for (&id, &label) in ids {
        out.push_str(&serde_json::to_string(&TruthLine { id, label }).map_err(|e| json("truth", e))?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| io(path, e))
}

pub fn read_truth(path: &Path) -> Result<HashMap<u64, bool>> {
    let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
    let mut truth = HashMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let t: TruthLine = serde_json::from_str(line).map_err(|e| json("truth line", e))?;
        if truth.insert(t.id, t.label).is_some() {
            return Err(crate::Error::Duplicate { what: "id", value: t.id.to_string() });
        }
    }
    Ok(truth)
}

pub const PLANTED_CONCEPT_NAME: &str = "planted concept";

pub fn planted_concept(cfg: &PlantedConfig) -> Result<PlantedConcept> {
    let shares = cfg.concept_share + cfg.distractor_share;
    if cfg.dim < 4 || cfg.n_items == 0 || !(0.0..1.0).contains(&shares) || cfg.background_clusters == 0 {
        return Err(crate::Error::InvalidConfig(format!("bad planted corpus config {cfg:?}")));
    }
    let d = cfg.dim;
    let mut rng = crate::rng::stream(cfg.seed, "planted", 0);
    let u = random_unit(&mut rng, d);
    let v = orthogonalize(gaussian(&mut rng, d), &[&u]);
    let r = orthogonalize(gaussian(&mut rng, d), &[&u, &v]);
    let w = unit(&axpy(&u, 1.0, &r));
    let background: Vec<Vec<f64>> = (0..cfg.background_clusters).map(|_| random_unit(&mut rng, d)).collect();

    let noise = |rng: &mut crate::rng::Rng, spread: f64| -> Vec<f64> {
        gaussian(rng, d).into_iter().map(|z| z * spread / (d as f64).sqrt()).collect()
    };
    let mut vectors = Vec::with_capacity(cfg.n_items * d);
    let mut truth = HashMap::with_capacity(cfg.n_items);
    for id in 0..cfg.n_items as u64 {
        let roll: f64 = rng.random();
        let (x, positive) = if roll < cfg.concept_share {
            let x = unit(&axpy(&u, 1.0, &noise(&mut rng, cfg.concept_spread)));
            let along: f64 = x.iter().zip(&v).map(|(a, b)| a * b).sum();
            (x, along > cfg.attribute_offset)
        } else if roll < shares {
            (unit(&axpy(&w, 1.0, &noise(&mut rng, cfg.concept_spread))), false)
        } else {
            let c = &background[rng.random_range(0..background.len())];
            (unit(&axpy(c, 1.0, &noise(&mut rng, cfg.background_spread))), false)
        };
        vectors.extend(x.iter().map(|&t| t as f32));
        truth.insert(id, positive);
    }
    let corpus = Corpus::new(EmbeddingMatrix::new(d, vectors)?, synthetic_items(cfg.n_items))?.normalized()?;

    let positive_side = unit(&axpy(&u, 0.6, &v));
    let negative_side = unit(&axpy(&u, -0.6, &v));
    let embedder = SyntheticTextEmbedder::new(d, cfg.seed)
        .with_anchor(PLANTED_CONCEPT_NAME, &u)
        .with_anchor("planted concept, marked variant", &positive_side)
        .with_anchor("planted concept lookalike", &w)
        .with_anchor("planted concept, unmarked variant", &negative_side);
    let mut concept = ConceptSpec::new(
        PLANTED_CONCEPT_NAME,
        vec!["planted concept, marked variant".into()],
        vec!["planted concept lookalike".into(), "planted concept, unmarked variant".into()],
    )?;
    concept.embed_missing(&embedder);
    Ok(PlantedConcept { corpus, truth, concept, embedder })
}

/// A planted corpus split into an indexed training side and a labeled
/// eval side, plus a noise-free oracle over the full truth map.
#[derive(Debug, Clone)]
pub struct PlantedExperiment {
    pub planted: PlantedConcept,
    pub split: SplitAssignment,
    pub index: NnIndex,
    pub eval: EvalData,
    pub truth: Arc<HashMap<u64, bool>>,
}

impl PlantedExperiment {
    pub fn new(cfg: &PlantedConfig, train_fraction: f64) -> Result<Self> {
        let planted = planted_concept(cfg)?;
        let ids: Vec<u64> = planted.corpus.ids().collect();
        let split = split(&ids, cfg.seed, train_fraction)?;
        let train = Arc::new(planted.corpus.subset(&split.train_ids)?);
        let test = Arc::new(planted.corpus.subset(&split.test_ids)?);
        let eval = EvalData::from_truth(test, &planted.truth)?;
        let index = NnIndex::build_exact(train)?;
        let truth = Arc::new(planted.truth.clone());
        Ok(Self { planted, split, index, eval, truth })
    }

    pub fn oracle(&self) -> RaterBinding {
        RaterBinding::oracle(self.truth.clone())
    }

    pub fn train_corpus(&self) -> &Corpus {
        self.index.corpus()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_gaussians_shape() {
        let (rows, labels) = two_gaussians(16, 30, 20, 1.0, 0.01, 5);
        assert_eq!(rows.len(), 50);
        assert_eq!(labels.iter().filter(|&&l| l).count(), 30);
        assert!(rows.iter().all(|r| r.len() == 16));
    }

    #[test]
    fn separable_fixture_margin() {
        let c = separable_fixture(4);
        assert_eq!(c.len(), 400);
        assert!(c.matrix().is_normalized());
        let centroid = fixture_positive_centroid(&c);
        let proj = |id: u64| crate::ann_index::dot(c.vector(id).unwrap(), &centroid);
        let worst_pos = (0..200).map(proj).fold(f64::INFINITY, f64::min);
        let best_neg = (200..400).map(proj).fold(f64::NEG_INFINITY, f64::max);
        // 4σ of per-coordinate noise is 0.4 before normalization
        assert!(worst_pos - best_neg > 0.4, "{worst_pos} {best_neg}");
    }

    #[test]
    fn embedder_is_deterministic_and_anchored() {
        let mut rng = crate::rng::seeded(1);
        let a = random_unit(&mut rng, 16);
        let e = SyntheticTextEmbedder::new(16, 7).with_anchor("cat", &a);
        assert_eq!(e.embed("cat"), e.embed("cat"));
        assert_eq!(e.embed("dog"), e.embed("dog"));
        assert_ne!(e.embed("dog"), e.embed("dogs"));
        let cos = crate::ann_index::dot(&e.embed("cat"), &to_f32_unit(&a));
        assert!(cos > 0.98, "{cos}");
        let v = e.embed("unanchored phrase");
        assert!((crate::embed_store::l2_norm(&v) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn planted_corpus_has_target_positive_rate() {
        let p = planted_concept(&PlantedConfig { n_items: 20_000, seed: 3, ..Default::default() }).unwrap();
        let rate = p.positive_rate();
        assert!((0.01..=0.05).contains(&rate), "{rate}");
        assert_eq!(p.corpus.len(), 20_000);
        assert!(p.concept.phrases().all(|ph| p.concept.phrase_embeddings.contains_key(ph)));
        let again = planted_concept(&PlantedConfig { n_items: 20_000, seed: 3, ..Default::default() }).unwrap();
        assert_eq!(again.corpus.matrix(), p.corpus.matrix());
    }

    #[test]
    fn truth_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let truth: HashMap<u64, bool> = (0..50).map(|i| (i, i % 7 == 0)).collect();
        write_truth(&dir.path().join("t.jsonl"), &truth).unwrap();
        assert_eq!(read_truth(&dir.path().join("t.jsonl")).unwrap(), truth);
    }
}
