//! Cosine top-k search over a normalized corpus.
//!
//! Two index kinds share one query path. The exact kind scans every row and
//! serves as the oracle. The partitioned kind is a single-level inverted file:
//! k-means centroids act as a coarse quantizer and a query only scans the rows
//! of its `probe` nearest cells.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::{linalg::general_mat_mul, Array2, ArrayView2};
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed_store::Corpus;
use crate::{rng, Error, Result};

pub const INDEX_MAGIC: [u8; 4] = *b"AGIX";
pub const INDEX_VERSION: u32 = 1;
pub const KMEANS_ITERATIONS: usize = 25;

const SCAN_SHARD_ROWS: usize = 16_384;
const ASSIGN_BLOCK_ROWS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u64,
    pub similarity: f64,
}

impl Neighbor {
    /// Descending similarity, then ascending id.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .similarity
            .total_cmp(&self.similarity)
            .then_with(|| self.id.cmp(&other.id))
    }
}

// Max-heap entry whose top is the worst retained neighbor.
struct Worst(Neighbor);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank_cmp(&other.0)
    }
}

struct TopK {
    k: usize,
    heap: BinaryHeap<Worst>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self { k, heap: BinaryHeap::with_capacity(k + 1) }
    }

    fn offer(&mut self, n: Neighbor) {
        if self.heap.len() < self.k {
            self.heap.push(Worst(n));
        } else if let Some(worst) = self.heap.peek() {
            if n.rank_cmp(&worst.0) == Ordering::Less {
                self.heap.pop();
                self.heap.push(Worst(n));
            }
        }
    }

    fn merge(mut self, other: TopK) -> TopK {
        for w in other.heap {
            self.offer(w.0);
        }
        self
    }

    fn into_sorted(self) -> Vec<Neighbor> {
        let mut out: Vec<Neighbor> = self.heap.into_iter().map(|w| w.0).collect();
        out.sort_by(Neighbor::rank_cmp);
        out
    }
}

/// Dot product of two f32 vectors accumulated in f64.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4 * 4;
    for i in (0..chunks).step_by(4) {
        for l in 0..4 {
            acc[l] += f64::from(a[i + l]) * f64::from(b[i + l]);
        }
    }
    let mut tail = 0.0;
    for i in chunks..a.len() {
        tail += f64::from(a[i]) * f64::from(b[i]);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexKind {
    Exact,
    Partitioned,
}

/// How many cells a partitioned query scans. Ignored by exact indexes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Probe {
    All,
    Partitions(usize),
}

#[derive(Debug, Clone)]
struct Partitions {
    dim: usize,
    centroids: Vec<f32>,
    centroid_sq_norms: Vec<f32>,
    assignments: Vec<u32>,
    lists: Vec<Vec<u32>>,
}

impl Partitions {
    fn count(&self) -> usize {
        self.lists.len()
    }

    fn centroid(&self, p: usize) -> &[f32] {
        &self.centroids[p * self.dim..(p + 1) * self.dim]
    }

    fn from_assignments(dim: usize, centroids: Vec<f32>, assignments: Vec<u32>) -> Self {
        let n = centroids.len() / dim;
        let mut lists = vec![Vec::new(); n];
        for (row, &p) in assignments.iter().enumerate() {
            lists[p as usize].push(row as u32);
        }
        let centroid_sq_norms = centroids
            .chunks_exact(dim)
            .map(|c| c.iter().map(|v| v * v).sum())
            .collect();
        Self { dim, centroids, centroid_sq_norms, assignments, lists }
    }
}

#[derive(Debug, Clone)]
pub struct NnIndex {
    corpus: Arc<Corpus>,
    partitions: Option<Partitions>,
}

impl NnIndex {
    /// Full-scan index. Requires a unit-normalized corpus.
    pub fn build_exact(corpus: Arc<Corpus>) -> Result<Self> {
        if !corpus.matrix().is_normalized() {
            return Err(Error::NotNormalized);
        }
        Ok(Self { corpus, partitions: None })
    }

    /// Inverted-file index over `n_partitions` k-means cells.
    pub fn build_partitioned(corpus: Arc<Corpus>, n_partitions: usize, seed: u64) -> Result<Self> {
        if !corpus.matrix().is_normalized() {
            return Err(Error::NotNormalized);
        }
        if n_partitions == 0 || n_partitions > corpus.len() {
            return Err(Error::OutOfRange {
                what: "n_partitions",
                detail: format!("{n_partitions} not in 1..={}", corpus.len()),
            });
        }
        let (centroids, assignments) = kmeans(&corpus, n_partitions, seed);
        let partitions = Partitions::from_assignments(corpus.dim(), centroids, assignments);
        Ok(Self { corpus, partitions: Some(partitions) })
    }

    pub fn kind(&self) -> IndexKind {
        if self.partitions.is_some() {
            IndexKind::Partitioned
        } else {
            IndexKind::Exact
        }
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn n_partitions(&self) -> usize {
        self.partitions.as_ref().map_or(1, Partitions::count)
    }

    /// Partition of each corpus row, for partitioned indexes.
    pub fn assignments(&self) -> Option<&[u32]> {
        self.partitions.as_ref().map(|p| p.assignments.as_slice())
    }

    /// The `k` most similar rows to `query`, sorted by similarity descending
    /// with ties broken by ascending id.
    pub fn top_k(&self, query: &[f32], k: usize, probe: Probe) -> Result<Vec<Neighbor>> {
        let dim = self.corpus.dim();
        if query.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: query.len() });
        }
        if k == 0 {
            return Err(Error::OutOfRange { what: "k", detail: "k must be at least 1".into() });
        }
        let matrix = self.corpus.matrix();
        let items = self.corpus.items();
        let score_row = |row: usize| Neighbor { id: items[row].id, similarity: dot(matrix.row(row), query) };

        let top = match &self.partitions {
            None => (0..matrix.count().div_ceil(SCAN_SHARD_ROWS))
                .into_par_iter()
                .map(|shard| {
                    let mut top = TopK::new(k);
                    let end = ((shard + 1) * SCAN_SHARD_ROWS).min(matrix.count());
                    for row in shard * SCAN_SHARD_ROWS..end {
                        top.offer(score_row(row));
                    }
                    top
                })
                .reduce(|| TopK::new(k), TopK::merge),
            Some(parts) => {
                let cells = nearest_cells(parts, query, probe);
                cells
                    .par_iter()
                    .map(|&cell| {
                        let mut top = TopK::new(k);
                        for &row in &parts.lists[cell] {
                            top.offer(score_row(row as usize));
                        }
                        top
                    })
                    .reduce(|| TopK::new(k), TopK::merge)
            }
        };
        Ok(top.into_sorted())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(&INDEX_MAGIC).map_err(io)?;
        w.write_all(&INDEX_VERSION.to_le_bytes()).map_err(io)?;
        let (kind, n) = match &self.partitions {
            None => (0u32, 0u32),
            Some(p) => (1u32, p.count() as u32),
        };
        w.write_all(&kind.to_le_bytes()).map_err(io)?;
        w.write_all(&n.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.corpus.dim() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.corpus.len() as u64).to_le_bytes()).map_err(io)?;
        if let Some(p) = &self.partitions {
            for v in &p.centroids {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
            for a in &p.assignments {
                w.write_all(&a.to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    /// Loads a sidecar written by [`NnIndex::save`] for the same corpus.
    pub fn load(path: &Path, corpus: Arc<Corpus>) -> Result<Self> {
        if !corpus.matrix().is_normalized() {
            return Err(Error::NotNormalized);
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path, e);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if magic != INDEX_MAGIC {
            return Err(Error::BadMagic { expected: INDEX_MAGIC, found: magic });
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32> {
            r.read_exact(&mut u32buf).map_err(io)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let version = read_u32(&mut r)?;
        if version != INDEX_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let kind = read_u32(&mut r)?;
        let n = read_u32(&mut r)? as usize;
        let dim = read_u32(&mut r)? as usize;
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf).map_err(io)?;
        let count = u64::from_le_bytes(u64buf) as usize;
        if dim != corpus.dim() {
            return Err(Error::DimensionMismatch { expected: corpus.dim(), actual: dim });
        }
        if count != corpus.len() {
            return Err(Error::IdCountMismatch { ids: corpus.len(), rows: count });
        }
        match kind {
            0 => Ok(Self { corpus, partitions: None }),
            1 => {
                let mut bytes = vec![0u8; n * dim * 4];
                r.read_exact(&mut bytes).map_err(io)?;
                let centroids: Vec<f32> = bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                if centroids.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidConfig("non-finite centroid in index file".into()));
                }
                let mut bytes = vec![0u8; count * 4];
                r.read_exact(&mut bytes).map_err(io)?;
                let assignments: Vec<u32> = bytes
                    .chunks_exact(4)
                    .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                if let Some(bad) = assignments.iter().find(|&&a| a as usize >= n) {
                    return Err(Error::OutOfRange { what: "partition assignment", detail: bad.to_string() });
                }
                let partitions = Partitions::from_assignments(dim, centroids, assignments);
                Ok(Self { corpus, partitions: Some(partitions) })
            }
            other => Err(Error::InvalidConfig(format!("unknown index kind {other}"))),
        }
    }
}

fn nearest_cells(parts: &Partitions, query: &[f32], probe: Probe) -> Vec<usize> {
    let n = parts.count();
    let probe = match probe {
        Probe::All => n,
        Probe::Partitions(p) => p.clamp(1, n),
    };
    if probe == n {
        return (0..n).collect();
    }
    // Squared distance up to the constant |q|^2.
    let mut dist: Vec<(f64, usize)> = (0..n)
        .map(|p| (f64::from(parts.centroid_sq_norms[p]) - 2.0 * dot(parts.centroid(p), query), p))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    dist.select_nth_unstable_by(probe - 1, cmp);
    dist.truncate(probe);
    dist.into_iter().map(|(_, p)| p).collect()
}

/// Lloyd's k-means with a fixed iteration count. Returns row-major centroids
/// and the final assignment of every row.
fn kmeans(corpus: &Corpus, k: usize, seed: u64) -> (Vec<f32>, Vec<u32>) {
    let matrix = corpus.matrix();
    let dim = matrix.dim();
    let n = matrix.count();
    let mut rng = rng::stream(seed, "kmeans-init", 0);
    let mut init: Vec<usize> = sample(&mut rng, n, k).into_vec();
    init.sort_unstable();
    let mut centroids: Vec<f32> = init.iter().flat_map(|&r| matrix.row(r).iter().copied()).collect();

    let mut assignments = vec![0u32; n];
    let mut best_dist = vec![0f32; n];
    for _ in 0..KMEANS_ITERATIONS {
        assign(matrix.as_slice(), dim, &centroids, &mut assignments, &mut best_dist);

        let mut sums = vec![0f64; k * dim];
        let mut sizes = vec![0usize; k];
        for (row, x) in matrix.rows().enumerate() {
            let c = assignments[row] as usize;
            sizes[c] += 1;
            for (s, &v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                *s += f64::from(v);
            }
        }
        for c in 0..k {
            if sizes[c] > 0 {
                let inv = 1.0 / sizes[c] as f64;
                for d in 0..dim {
                    centroids[c * dim + d] = (sums[c * dim + d] * inv) as f32;
                }
            }
        }
        reseed_empty(matrix, dim, &mut centroids, &mut assignments, &mut sizes, &best_dist);
    }
    assign(matrix.as_slice(), dim, &centroids, &mut assignments, &mut best_dist);
    (centroids, assignments)
}

/// Each empty cell takes the point of the current largest cell that lies
/// farthest from that cell's centroid.
fn reseed_empty(
    matrix: &crate::embed_store::EmbeddingMatrix,
    dim: usize,
    centroids: &mut [f32],
    assignments: &mut [u32],
    sizes: &mut [usize],
    best_dist: &[f32],
) {
    let k = sizes.len();
    for empty in 0..k {
        if sizes[empty] != 0 {
            continue;
        }
        let largest = (0..k).max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a))).unwrap();
        if sizes[largest] < 2 {
            continue;
        }
        let far = (0..assignments.len())
            .filter(|&r| assignments[r] as usize == largest)
            .max_by(|&a, &b| best_dist[a].total_cmp(&best_dist[b]).then(b.cmp(&a)))
            .unwrap();
        centroids[empty * dim..(empty + 1) * dim].copy_from_slice(matrix.row(far));
        assignments[far] = empty as u32;
        sizes[largest] -= 1;
        sizes[empty] = 1;
    }
}

/// Nearest-centroid assignment via blocked matrix products. `best_dist`
/// receives squared Euclidean distances.
fn assign(data: &[f32], dim: usize, centroids: &[f32], assignments: &mut [u32], best_dist: &mut [f32]) {
    let k = centroids.len() / dim;
    let cview = ArrayView2::from_shape((k, dim), centroids).unwrap();
    let ct = cview.t();
    let c_norms: Vec<f32> = centroids.chunks_exact(dim).map(|c| c.iter().map(|v| v * v).sum()).collect();
    data.par_chunks(ASSIGN_BLOCK_ROWS * dim)
        .zip(assignments.par_chunks_mut(ASSIGN_BLOCK_ROWS))
        .zip(best_dist.par_chunks_mut(ASSIGN_BLOCK_ROWS))
        .for_each(|((block, out), dist)| {
            let rows = block.len() / dim;
            let x = ArrayView2::from_shape((rows, dim), block).unwrap();
            let mut prod = Array2::<f32>::zeros((rows, k));
            general_mat_mul(1.0, &x, &ct, 0.0, &mut prod);
            for (r, (a, d)) in out.iter_mut().zip(dist.iter_mut()).enumerate() {
                let x_norm: f32 = x.row(r).iter().map(|v| v * v).sum();
                let mut best = f32::INFINITY;
                let mut best_c = 0;
                for c in 0..k {
                    let dd = c_norms[c] - 2.0 * prod[[r, c]];
                    if dd < best {
                        best = dd;
                        best_c = c;
                    }
                }
                *a = best_c as u32;
                *d = (best + x_norm).max(0.0);
            }
        });
}

/// Fraction of `exact` ids that also appear in `approx`.
pub fn recall(exact: &[Neighbor], approx: &[Neighbor]) -> f64 {
    if exact.is_empty() {
        return 1.0;
    }
    let found: std::collections::HashSet<u64> = approx.iter().map(|n| n.id).collect();
    exact.iter().filter(|n| found.contains(&n.id)).count() as f64 / exact.len() as f64
}
