//! Dense embedding storage, cosine similarity and exact top-k search.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "CLTS" | u32 version = 1 | u32 dim | u64 count
//! count × ( u32 id_len | id bytes (UTF-8) | dim × f32 )
//! ```

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STORE_MAGIC: &[u8; 4] = b"CLTS";
pub const STORE_VERSION: u32 = 1;
pub const STORE_HEADER_LEN: usize = 20;

#[derive(Debug, Error, PartialEq)]
pub enum StoreError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("zero-norm vector{}", .0.as_ref().map(|id| format!(" for `{id}`")).unwrap_or_default())]
    ZeroVector(Option<String>),
    #[error("non-finite component in vector `{0}`")]
    NonFinite(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no candidates left after exclusion")]
    EmptyCandidates,
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported store version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated store: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("id at offset {0} is not valid UTF-8")]
    InvalidUtf8(usize),
    #[error("{0} trailing bytes after last record")]
    TrailingBytes(usize),
    #[error("line {line}: {message}")]
    Json { line: usize, message: String },
}

/// Cosine similarity clamped to [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub fn new(value: f64) -> Self {
        Self(value.clamp(-1.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Cosine distance, defined as `1 - similarity`.
    pub fn distance(self) -> f64 {
        1.0 - self.0
    }
}

/// Cosine over `f32` vectors with `f64` accumulation.
pub fn cosine(u: &[f32], v: &[f32]) -> Result<SimilarityScore, StoreError> {
    if u.len() != v.len() {
        return Err(StoreError::DimMismatch { expected: u.len(), found: v.len() });
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(StoreError::ZeroVector(None));
    }
    Ok(SimilarityScore::new(dot / (nu.sqrt() * nv.sqrt())))
}

/// Cosine over `f64` vectors.
pub fn cosine_f64(u: &[f64], v: &[f64]) -> Result<SimilarityScore, StoreError> {
    if u.len() != v.len() {
        return Err(StoreError::DimMismatch { expected: u.len(), found: v.len() });
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Err(StoreError::ZeroVector(None));
    }
    Ok(SimilarityScore::new(dot / (nu.sqrt() * nv.sqrt())))
}

/// One ranked search result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub id: String,
    pub score: SimilarityScore,
}

/// Ranking order: higher score first, then ascending id.
pub fn rank_order(a_score: f64, a_id: &str, b_score: f64, b_id: &str) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_id.cmp(b_id))
}

struct Ranked<'a> {
    score: f64,
    id: &'a str,
}

impl PartialEq for Ranked<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked<'_> {}
impl PartialOrd for Ranked<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
// "Greater" means ranked later, so a max-heap keeps the worst retained hit on top.
impl Ord for Ranked<'_> {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(self.score, self.id, other.score, other.id)
    }
}

/// Keeps the best `k` of `candidates` with a bounded heap, returned in rank order.
pub fn select_top_k<'a, I>(candidates: I, k: usize) -> Vec<(&'a str, f64)>
where
    I: IntoIterator<Item = (&'a str, f64)>,
{
    if k == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Ranked<'a>> = BinaryHeap::with_capacity(k + 1);
    for (id, score) in candidates {
        let item = Ranked { score, id };
        if heap.len() < k {
            heap.push(item);
        } else if let Some(worst) = heap.peek() {
            if item < *worst {
                heap.pop();
                heap.push(item);
            }
        }
    }
    heap.into_sorted_vec().into_iter().map(|r| (r.id, r.score)).collect()
}

/// Id-indexed vectors of a fixed dimension, kept in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self, StoreError> {
        if dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        Ok(Self { dim, ids: Vec::new(), data: Vec::new(), index: HashMap::new() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: &[f32]) -> Result<(), StoreError> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(StoreError::DimMismatch { expected: self.dim, found: vector.len() });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(StoreError::NonFinite(id));
        }
        if self.index.contains_key(&id) {
            return Err(StoreError::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    pub fn require(&self, id: &str) -> Result<&[f32], StoreError> {
        self.get(id).ok_or_else(|| StoreError::UnknownId(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f32])> + '_ {
        self.ids.iter().enumerate().map(move |(i, id)| (id.as_str(), self.row(i)))
    }

    /// Serialized size in bytes.
    pub fn encoded_len(&self) -> usize {
        STORE_HEADER_LEN + self.ids.iter().map(|id| 4 + id.len() + 4 * self.dim).sum::<usize>()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        out.write_all(STORE_MAGIC)?;
        out.write_all(&STORE_VERSION.to_le_bytes())?;
        out.write_all(&(self.dim as u32).to_le_bytes())?;
        out.write_all(&(self.ids.len() as u64).to_le_bytes())?;
        for (id, v) in self.iter() {
            out.write_all(&(id.len() as u32).to_le_bytes())?;
            out.write_all(id.as_bytes())?;
            for x in v {
                out.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != STORE_MAGIC {
            return Err(StoreError::BadMagic);
        }
        let version = cur.u32()?;
        if version != STORE_VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        let dim = cur.u32()? as usize;
        let count = cur.u64()?;
        let mut store = Self::new(dim)?;
        for _ in 0..count {
            let id_len = cur.u32()? as usize;
            let id_offset = cur.pos;
            let id = std::str::from_utf8(cur.take(id_len)?)
                .map_err(|_| StoreError::InvalidUtf8(id_offset))?
                .to_string();
            let raw = cur.take(dim.checked_mul(4).ok_or(StoreError::Truncated {
                offset: cur.pos,
                needed: usize::MAX,
                available: bytes.len() - cur.pos,
            })?)?;
            let vector: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            store.insert(id, &vector)?;
        }
        if cur.pos != bytes.len() {
            return Err(StoreError::TrailingBytes(bytes.len() - cur.pos));
        }
        Ok(store)
    }

    /// Reads `{"id": ..., "vector": [...]}` lines. The dimension is taken
    /// from `dim` or, if `None`, from the first record.
    pub fn from_jsonl<R: BufRead>(reader: R, dim: Option<usize>) -> Result<Self, StoreError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Line {
            id: String,
            vector: Vec<f32>,
        }
        let mut store: Option<Self> = dim.map(Self::new).transpose()?;
        for (idx, line) in reader.lines().enumerate() {
            let json = |message: String| StoreError::Json { line: idx + 1, message };
            let line = line.map_err(|e| json(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Line = serde_json::from_str(&line).map_err(|e| json(e.to_string()))?;
            let store = match &mut store {
                Some(s) => s,
                None => store.insert(Self::new(rec.vector.len())?),
            };
            store.insert(rec.id, &rec.vector)?;
        }
        match store {
            Some(s) => Ok(s),
            None => Err(StoreError::Json { line: 0, message: "no records and no dimension given".into() }),
        }
    }

    /// Exact top-k by cosine against `query`, skipping `exclude`.
    pub fn top_k(
        &self,
        query: &[f32],
        k: usize,
        exclude: &HashSet<&str>,
    ) -> Result<Vec<Hit>, StoreError> {
        let scored = self.scan(query, exclude, 0..self.len())?;
        finish(select_top_k(scored.iter().map(|(id, s)| (*id, *s)), k), k)
    }

    /// Sharded parallel variant of [`EmbeddingStore::top_k`]. Each shard keeps
    /// its own top-k; the merge applies the same total order, so the result is
    /// identical to the sequential scan.
    pub fn par_top_k(
        &self,
        query: &[f32],
        k: usize,
        exclude: &HashSet<&str>,
        shards: usize,
    ) -> Result<Vec<Hit>, StoreError> {
        let shards = shards.max(1);
        let chunk = self.len().div_ceil(shards).max(1);
        let partial: Vec<Vec<(&str, f64)>> = (0..self.len())
            .step_by(chunk)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|start| {
                let end = (start + chunk).min(self.len());
                let scored = self.scan(query, exclude, start..end)?;
                Ok(select_top_k(scored, k))
            })
            .collect::<Result<_, StoreError>>()?;
        finish(select_top_k(partial.into_iter().flatten(), k), k)
    }

    fn scan<'a>(
        &'a self,
        query: &[f32],
        exclude: &HashSet<&str>,
        range: std::ops::Range<usize>,
    ) -> Result<Vec<(&'a str, f64)>, StoreError> {
        if query.len() != self.dim {
            return Err(StoreError::DimMismatch { expected: self.dim, found: query.len() });
        }
        let mut out = Vec::with_capacity(range.len());
        for i in range {
            let id = self.ids[i].as_str();
            if exclude.contains(id) {
                continue;
            }
            let score = cosine(query, self.row(i)).map_err(|e| match e {
                StoreError::ZeroVector(_) => StoreError::ZeroVector(Some(id.to_string())),
                other => other,
            })?;
            out.push((id, score.value()));
        }
        Ok(out)
    }
}

fn finish(ranked: Vec<(&str, f64)>, k: usize) -> Result<Vec<Hit>, StoreError> {
    if k == 0 {
        return Err(StoreError::ZeroK);
    }
    if ranked.is_empty() {
        return Err(StoreError::EmptyCandidates);
    }
    Ok(ranked
        .into_iter()
        .map(|(id, s)| Hit { id: id.to_string(), score: SimilarityScore::new(s) })
        .collect())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(StoreError::Truncated { offset: self.pos, needed: n, available });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }
}
