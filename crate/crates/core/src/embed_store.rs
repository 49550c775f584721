//! The frozen co-embedding corpus.
//!
//! On-disk layout (all little-endian):
//!
//! ```text
//! "AGEM" | version: u32 = 1 | dim: u32 | count: u64 | count*dim f32 values
//! ```
//!
//! A companion JSONL file carries one `{"id": u64, "url": string}` object per
//! row. Row order defines the id to vector correspondence.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

pub const MAGIC: [u8; 4] = *b"AGEM";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: u64 = 4 + 4 + 4 + 8;

/// Rows whose L2 norm is within this distance of 1.0 count as unit vectors.
pub const NORM_TOLERANCE: f64 = 1e-3;

/// Dense row-major `count x dim` matrix of f32 embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    vectors: Vec<f32>,
    normalized: bool,
}

impl EmbeddingMatrix {
    /// Wraps a row-major buffer, rejecting NaN/Inf components.
    pub fn new(dim: usize, vectors: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedding dim must be positive".into()));
        }
        if !vectors.len().is_multiple_of(dim) {
            return Err(Error::InvalidConfig(format!(
                "buffer of {} floats is not a multiple of dim {dim}",
                vectors.len()
            )));
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: pos / dim, col: pos % dim });
        }
        let normalized = rows_are_unit(dim, &vectors);
        Ok(Self { dim, vectors, normalized })
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, vectors: Vec::new(), normalized: true }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.vectors.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.vectors
    }

    /// Copies the given rows, in order, into a new matrix.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut vectors = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            vectors.extend_from_slice(self.row(r));
        }
        Self { dim: self.dim, vectors, normalized: self.normalized }
    }
}

fn rows_are_unit(dim: usize, vectors: &[f32]) -> bool {
    vectors.chunks_exact(dim).all(|row| (l2_norm(row) - 1.0).abs() <= NORM_TOLERANCE)
}

pub(crate) fn l2_norm(row: &[f32]) -> f64 {
    row.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
}

/// Rescales every row to unit L2 norm.
pub fn normalize(m: EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let dim = m.dim;
    let mut vectors = m.vectors;
    for (r, row) in vectors.chunks_exact_mut(dim).enumerate() {
        let norm = l2_norm(row);
        if norm == 0.0 {
            return Err(Error::ZeroNorm { row: r });
        }
        for v in row.iter_mut() {
            *v = (f64::from(*v) / norm) as f32;
        }
    }
    Ok(EmbeddingMatrix { dim, vectors, normalized: true })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ItemRef {
    pub id: u64,
    pub url: String,
}

/// Reads an embedding file, streaming rows straight into the output buffer.
pub fn read_matrix(path: &Path) -> Result<EmbeddingMatrix> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut reader = BufReader::with_capacity(1 << 20, file);
    let io = |e| Error::io(path, e);

    let mut header = [0u8; HEADER_LEN as usize];
    if file_len < HEADER_LEN {
        return Err(Error::Truncated { expected: HEADER_LEN, actual: file_len });
    }
    reader.read_exact(&mut header).map_err(io)?;
    let magic: [u8; 4] = header[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC, found: magic });
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(header[12..20].try_into().unwrap());
    if dim == 0 {
        return Err(Error::InvalidConfig("embedding dim must be positive".into()));
    }

    let expected = count
        .checked_mul(dim as u64 * 4)
        .ok_or_else(|| Error::OutOfRange { what: "count", detail: count.to_string() })?;
    let actual = file_len - HEADER_LEN;
    if actual < expected {
        return Err(Error::Truncated { expected, actual });
    }
    if actual > expected {
        return Err(Error::TrailingData { expected, actual });
    }

    let count = count as usize;
    let mut vectors = Vec::with_capacity(count * dim);
    let mut buf = vec![0u8; dim * 4];
    for row in 0..count {
        reader.read_exact(&mut buf).map_err(io)?;
        for (col, chunk) in buf.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            vectors.push(v);
        }
    }
    EmbeddingMatrix::new(dim, vectors)
}

pub fn write_matrix(path: &Path, m: &EmbeddingMatrix) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::with_capacity(1 << 20, file);
    let io = |e| Error::io(path, e);
    w.write_all(&MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(m.dim as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(m.count() as u64).to_le_bytes()).map_err(io)?;
    for v in &m.vectors {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_ids(path: &Path) -> Result<Vec<ItemRef>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: ItemRef = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), lineno + 1), e))?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_ids(path: &Path, items: &[ItemRef]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::json("id table", e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// An embedding matrix paired with its id table.
#[derive(Debug, Clone)]
pub struct Corpus {
    matrix: EmbeddingMatrix,
    items: Vec<ItemRef>,
    rows_by_id: HashMap<u64, usize>,
}

impl Corpus {
    /// Pairs a matrix with its id table. Duplicate ids or URLs are rejected.
    pub fn new(matrix: EmbeddingMatrix, items: Vec<ItemRef>) -> Result<Self> {
        if items.len() != matrix.count() {
            return Err(Error::IdCountMismatch { ids: items.len(), rows: matrix.count() });
        }
        let mut rows_by_id = HashMap::with_capacity(items.len());
        let mut urls = HashSet::with_capacity(items.len());
        for (row, item) in items.iter().enumerate() {
            if item.url.is_empty() {
                return Err(Error::InvalidConfig(format!("item {} has an empty url", item.id)));
            }
            if rows_by_id.insert(item.id, row).is_some() {
                return Err(Error::Duplicate { what: "id", value: item.id.to_string() });
            }
            if !urls.insert(item.url.as_str()) {
                return Err(Error::Duplicate { what: "url", value: item.url.clone() });
            }
        }
        Ok(Self { matrix, items, rows_by_id })
    }

    /// Reads both files without altering the vectors.
    pub fn ingest(embeddings: &Path, ids: &Path) -> Result<Self> {
        let matrix = read_matrix(embeddings)?;
        let items = read_ids(ids)?;
        Self::new(matrix, items)
    }

    /// Reads both files and unit-normalizes every row.
    pub fn load(embeddings: &Path, ids: &Path) -> Result<Self> {
        let corpus = Self::ingest(embeddings, ids)?;
        corpus.normalized()
    }

    pub fn normalized(self) -> Result<Self> {
        let matrix = normalize(self.matrix)?;
        Ok(Self { matrix, ..self })
    }

    pub fn write(&self, embeddings: &Path, ids: &Path) -> Result<()> {
        write_matrix(embeddings, &self.matrix)?;
        write_ids(ids, &self.items)
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }

    pub fn items(&self) -> &[ItemRef] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.items.iter().map(|it| it.id)
    }

    pub fn row_of(&self, id: u64) -> Option<usize> {
        self.rows_by_id.get(&id).copied()
    }

    pub fn vector(&self, id: u64) -> Option<&[f32]> {
        self.row_of(id).map(|r| self.matrix.row(r))
    }

    pub fn item(&self, id: u64) -> Option<&ItemRef> {
        self.row_of(id).map(|r| &self.items[r])
    }

    /// A new corpus holding only `ids`, in the given order.
    pub fn subset(&self, ids: &[u64]) -> Result<Self> {
        let rows = ids
            .iter()
            .map(|&id| self.row_of(id).ok_or(Error::UnknownItem(id)))
            .collect::<Result<Vec<_>>>()?;
        let matrix = self.matrix.select_rows(&rows);
        let items = rows.iter().map(|&r| self.items[r].clone()).collect();
        Self::new(matrix, items)
    }
}

/// Deterministic train/test partition of a corpus id set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    /// Sorted ascending.
    pub train_ids: Vec<u64>,
    /// Sorted ascending.
    pub test_ids: Vec<u64>,
    pub seed: u64,
}

/// Shuffles `ids` under `seed` and takes the first `round(fraction * n)` as
/// train. Rounding is half-to-even.
pub fn split(ids: &[u64], seed: u64, train_fraction: f64) -> Result<SplitAssignment> {
    if ids.is_empty() {
        return Err(Error::Empty("corpus"));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::OutOfRange {
            what: "train_fraction",
            detail: format!("{train_fraction} not in (0, 1)"),
        });
    }
    let n_train = train_count(ids.len(), train_fraction);
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    let mut shuffled = sorted.clone();
    shuffled.shuffle(&mut rng::stream(seed, "split", 0));
    let mut train_ids = shuffled[..n_train].to_vec();
    let mut test_ids = shuffled[n_train..].to_vec();
    train_ids.sort_unstable();
    test_ids.sort_unstable();
    Ok(SplitAssignment { train_ids, test_ids, seed })
}

pub(crate) fn train_count(n: usize, fraction: f64) -> usize {
    let x = n as f64 * fraction;
    let lo = x.floor();
    // products like 11 * (15/22) land a hair below the half
    if (x - lo - 0.5).abs() < 1e-9 {
        let lo = lo as usize;
        return if lo.is_multiple_of(2) { lo } else { lo + 1 };
    }
    x.round() as usize
}
