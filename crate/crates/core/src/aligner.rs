//! Linear alignment head trained with the CoSENT ranking loss.
//!
//! The head is a square matrix `A` applied to both sides of a pair; the
//! predicted similarity is `cos(A·u, A·v)`. For a batch with predictions `s`
//! and labels `l`, the loss is
//!
//! ```text
//! L = ln(1 + Σ_{(i,j): l_i > l_j} exp(λ·(s_j − s_i)))
//! ```
//!
//! so a pair with the higher label is penalized when it is predicted less
//! similar than a lower-labelled pair.
//!
//! Checkpoint layout (little-endian): `"CLHD" | u32 version = 1 | u32 dim |
//! dim² × f64 (row-major) | u32 CRC-32 of the f64 payload`.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedstore::{cosine_f64, EmbeddingStore, SimilarityScore, StoreError};
use crate::pairgen::ScoredPair;
use crate::rng;

pub const HEAD_MAGIC: &[u8; 4] = b"CLHD";
pub const HEAD_VERSION: u32 = 1;
pub const DEFAULT_SCALE: f64 = 20.0;
const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("dimension mismatch: head is {head}, vector is {vector}")]
    DimMismatch { head: usize, vector: usize },
    #[error("predictions and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("scale must be positive, got {0}")]
    BadScale(f64),
    #[error("NaN in loss input")]
    NaN,
    #[error("batch needs at least 2 pairs, got {0}")]
    BatchTooSmall(usize),
    #[error("mapped vector norm below 1e-12 (pair {0})")]
    Degenerate(usize),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training set has no batch of at least 2 pairs")]
    EmptyTrainSet,
    #[error("training diverged in epoch {epoch} (last good epoch: {last_good_epoch:?})")]
    Diverged {
        epoch: usize,
        last_good_epoch: Option<usize>,
        last_good: Box<(AlignmentHead, TrainReport)>,
    },
    #[error("bad head magic")]
    BadMagic,
    #[error("unsupported head version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated head checkpoint at offset {offset}: needed {needed} bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("{0} trailing bytes after checkpoint")]
    TrailingBytes(usize),
    #[error("non-finite entry in head")]
    NonFinite,
}

/// Square matrix applied to embeddings before cosine.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentHead {
    dim: usize,
    matrix: Vec<f64>,
}

impl AlignmentHead {
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        Self { dim, matrix }
    }

    /// `I + N(0, std²)` entrywise, so training starts from the base space.
    pub fn perturbed_identity(dim: usize, std: f64, seed: u64) -> Self {
        let mut head = Self::identity(dim);
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let mut rng = rng::substream(seed, "head-init");
        for x in &mut head.matrix {
            *x += normal.sample(&mut rng);
        }
        head
    }

    /// Row-major `dim × dim` entries.
    pub fn from_matrix(dim: usize, matrix: Vec<f64>) -> Result<Self, AlignError> {
        if matrix.len() != dim * dim {
            return Err(AlignError::DimMismatch { head: dim, vector: matrix.len() });
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(AlignError::NonFinite);
        }
        Ok(Self { dim, matrix })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { dim: self.dim, matrix: self.matrix.iter().map(|x| x * factor).collect() }
    }

    /// `A·v`.
    pub fn apply(&self, v: &[f32]) -> Result<Vec<f64>, AlignError> {
        if v.len() != self.dim {
            return Err(AlignError::DimMismatch { head: self.dim, vector: v.len() });
        }
        Ok(self
            .matrix
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(v).map(|(a, &x)| a * f64::from(x)).sum())
            .collect())
    }

    /// CRC-32 of the little-endian matrix payload.
    pub fn checksum(&self) -> u32 {
        crc32fast::hash(&self.payload())
    }

    fn payload(&self) -> Vec<u8> {
        self.matrix.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut out = Vec::with_capacity(12 + payload.len() + 4);
        out.extend_from_slice(HEAD_MAGIC);
        out.extend_from_slice(&HEAD_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&payload);
        out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AlignError> {
        let need = |offset: usize, needed: usize| -> Result<(), AlignError> {
            if offset.checked_add(needed).is_none_or(|end| bytes.len() < end) {
                Err(AlignError::Truncated { offset, needed })
            } else {
                Ok(())
            }
        };
        let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
        need(0, 4)?;
        if &bytes[..4] != HEAD_MAGIC {
            return Err(AlignError::BadMagic);
        }
        need(4, 4)?;
        let version = u32_at(4);
        if version != HEAD_VERSION {
            return Err(AlignError::UnsupportedVersion(version));
        }
        need(8, 4)?;
        let dim = u32_at(8) as usize;
        let payload_len = dim
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(8))
            .ok_or(AlignError::Truncated { offset: 12, needed: usize::MAX })?;
        need(12, payload_len)?;
        need(12 + payload_len, 4)?;
        let payload = &bytes[12..12 + payload_len];
        let stored = u32_at(12 + payload_len);
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(AlignError::ChecksumMismatch { stored, computed });
        }
        let end = 16 + payload_len;
        if bytes.len() != end {
            return Err(AlignError::TrailingBytes(bytes.len() - end));
        }
        let matrix = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::from_matrix(dim, matrix)
    }
}

/// `cos(A·u, A·v)`.
pub fn predict_similarity(
    head: &AlignmentHead,
    u: &[f32],
    v: &[f32],
) -> Result<SimilarityScore, AlignError> {
    Ok(cosine_f64(&head.apply(u)?, &head.apply(v)?)?)
}

fn check_loss_inputs(predicted: &[f64], labels: &[f64], scale: f64) -> Result<(), AlignError> {
    if !(scale > 0.0) {
        return Err(AlignError::BadScale(scale));
    }
    if predicted.len() != labels.len() {
        return Err(AlignError::LengthMismatch(predicted.len(), labels.len()));
    }
    if predicted.is_empty() {
        return Err(AlignError::Empty);
    }
    if predicted.iter().chain(labels).any(|x| x.is_nan()) {
        return Err(AlignError::NaN);
    }
    Ok(())
}

/// Loss value and `dL/ds_i` for each prediction.
fn cosent_with_grad(predicted: &[f64], labels: &[f64], scale: f64) -> (f64, Vec<f64>) {
    let n = predicted.len();
    let mut terms = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if labels[i] > labels[j] {
                terms.push((i, j, scale * (predicted[j] - predicted[i])));
            }
        }
    }
    let mut grad = vec![0.0; n];
    if terms.is_empty() {
        return (0.0, grad);
    }
    // ln(1 + Σ e^t) with the implicit zero term folded into the max shift.
    let m = terms.iter().fold(0.0f64, |acc, t| acc.max(t.2));
    let z = (-m).exp() + terms.iter().map(|t| (t.2 - m).exp()).sum::<f64>();
    let loss = m + z.ln();
    for &(i, j, t) in &terms {
        let w = (t - m).exp() / z;
        grad[j] += scale * w;
        grad[i] -= scale * w;
    }
    (loss.max(0.0), grad)
}

pub fn cosent_loss(predicted: &[f64], labels: &[f64], scale: f64) -> Result<f64, AlignError> {
    check_loss_inputs(predicted, labels, scale)?;
    Ok(cosent_with_grad(predicted, labels, scale).0)
}

/// One training example with both sides already resolved to vectors.
#[derive(Debug, Clone, Copy)]
pub struct PairSample<'a> {
    pub low: &'a [f32],
    pub rich: &'a [f32],
    pub label: f64,
}

/// CoSENT loss of `batch` under `head` and the exact gradient `dL/dA`
/// (row-major, same shape as the head).
pub fn cosent_gradient(
    batch: &[PairSample<'_>],
    head: &AlignmentHead,
    scale: f64,
) -> Result<(f64, Vec<f64>), AlignError> {
    if batch.len() < 2 {
        return Err(AlignError::BatchTooSmall(batch.len()));
    }
    let d = head.dim;
    let mapped: Vec<(Vec<f64>, Vec<f64>)> = batch
        .par_iter()
        .map(|p| Ok((head.apply(p.low)?, head.apply(p.rich)?)))
        .collect::<Result<_, AlignError>>()?;

    let mut sims = Vec::with_capacity(batch.len());
    // Per pair: (ds/dx, ds/dy).
    let mut partials = Vec::with_capacity(batch.len());
    for (k, (x, y)) in mapped.iter().enumerate() {
        let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let ny = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        if nx < DEGENERATE_NORM || ny < DEGENERATE_NORM {
            return Err(AlignError::Degenerate(k));
        }
        let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        let s = dot / (nx * ny);
        let dsdx: Vec<f64> = (0..d).map(|r| y[r] / (nx * ny) - s * x[r] / (nx * nx)).collect();
        let dsdy: Vec<f64> = (0..d).map(|r| x[r] / (nx * ny) - s * y[r] / (ny * ny)).collect();
        sims.push(s);
        partials.push((dsdx, dsdy));
    }
    let labels: Vec<f64> = batch.iter().map(|p| p.label).collect();
    check_loss_inputs(&sims, &labels, scale)?;
    let (loss, dl_ds) = cosent_with_grad(&sims, &labels, scale);

    // Rows are independent and each sums pairs in batch order, so the result
    // does not depend on thread scheduling.
    let mut grad = vec![0.0; d * d];
    grad.par_chunks_mut(d).enumerate().for_each(|(r, row)| {
        for (k, p) in batch.iter().enumerate() {
            let g = dl_ds[k];
            if g == 0.0 {
                continue;
            }
            let (dsdx, dsdy) = &partials[k];
            let (cx, cy) = (g * dsdx[r], g * dsdy[r]);
            for c in 0..d {
                row[c] += cx * f64::from(p.low[c]) + cy * f64::from(p.rich[c]);
            }
        }
    });
    Ok((loss, grad))
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    /// Plain gradient descent.
    Sgd,
    /// Adam with β1 = 0.9, β2 = 0.999, ε = 1e-8.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// CoSENT scale λ.
    pub scale: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 10,
            batch_size: 64,
            scale: DEFAULT_SCALE,
            seed: 0,
            optimizer: Optimizer::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AlignError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(AlignError::Config(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if self.epochs < 1 {
            return Err(AlignError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(AlignError::Config("batch size must be >= 2".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(AlignError::Config(format!("scale {} must be > 0", self.scale)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_val_loss: Option<f64>,
    pub train_loss: Vec<f64>,
    /// Empty when no validation data was supplied.
    pub val_loss: Vec<f64>,
    /// Not serialized, so reports of identical runs stay byte-identical.
    #[serde(skip)]
    pub wall_time_secs: f64,
    pub head_checksum: u32,
}

/// Pairs plus the stores their ids resolve in. `weight` scales this source's
/// contribution when several sources are trained together.
#[derive(Debug, Clone, Copy)]
pub struct TrainSource<'a> {
    pub pairs: &'a [ScoredPair],
    pub low_store: &'a EmbeddingStore,
    pub rich_store: &'a EmbeddingStore,
    pub weight: f64,
}

impl<'a> TrainSource<'a> {
    pub fn new(pairs: &'a [ScoredPair], low_store: &'a EmbeddingStore, rich_store: &'a EmbeddingStore) -> Self {
        Self { pairs, low_store, rich_store, weight: 1.0 }
    }

    fn resolve(&self) -> Result<Vec<PairSample<'a>>, AlignError> {
        self.pairs
            .iter()
            .map(|p| {
                Ok(PairSample {
                    low: self.low_store.require(&p.low_id)?,
                    rich: self.rich_store.require(&p.rich_id)?,
                    label: p.label.value(),
                })
            })
            .collect()
    }
}

/// Splits `indices` into chunks of `size`, folding a trailing singleton into
/// the previous chunk. A lone index with nothing to join is dropped.
fn chunk_batches(indices: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = indices.chunks(size).map(<[usize]>::to_vec).collect();
    if out.last().is_some_and(|b| b.len() < 2) {
        let tail = out.pop().unwrap_or_default();
        if let Some(prev) = out.last_mut() {
            prev.extend(tail);
        }
    }
    out
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

fn mean_loss(
    head: &AlignmentHead,
    sources: &[(Vec<PairSample<'_>>, f64)],
    batch_size: usize,
    scale: f64,
) -> Result<f64, AlignError> {
    let (mut total, mut weight) = (0.0, 0.0);
    for (samples, w) in sources {
        let idx: Vec<usize> = (0..samples.len()).collect();
        for batch in chunk_batches(&idx, batch_size) {
            let mut preds = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &i in &batch {
                preds.push(predict_similarity(head, samples[i].low, samples[i].rich)?.value());
                labels.push(samples[i].label);
            }
            total += w * cosent_loss(&preds, &labels, scale)?;
            weight += w;
        }
    }
    Ok(if weight > 0.0 { total / weight } else { 0.0 })
}

fn resolve_sources<'a>(
    sources: &[TrainSource<'a>],
    dim: usize,
) -> Result<Vec<(Vec<PairSample<'a>>, f64)>, AlignError> {
    sources
        .iter()
        .map(|s| {
            for store in [s.low_store, s.rich_store] {
                if store.dim() != dim {
                    return Err(AlignError::DimMismatch { head: dim, vector: store.dim() });
                }
            }
            Ok((s.resolve()?, s.weight))
        })
        .collect()
}

/// Trains a copy of `head0`. Shuffling comes from `config.seed`; batches never
/// mix sources. Returns the trained head and per-epoch losses.
pub fn train(
    head0: &AlignmentHead,
    train_sources: &[TrainSource<'_>],
    val_sources: &[TrainSource<'_>],
    config: &TrainConfig,
) -> Result<(AlignmentHead, TrainReport), AlignError> {
    config.validate()?;
    let started = Instant::now();
    let train_data = resolve_sources(train_sources, head0.dim)?;
    let val_data = resolve_sources(val_sources, head0.dim)?;
    let has_val = val_data.iter().any(|(s, _)| s.len() >= 2);

    let mut head = head0.clone();
    let mut report = TrainReport {
        initial_val_loss: None,
        train_loss: Vec::with_capacity(config.epochs),
        val_loss: Vec::new(),
        wall_time_secs: 0.0,
        head_checksum: head.checksum(),
    };
    if has_val {
        report.initial_val_loss = Some(mean_loss(&head, &val_data, config.batch_size, config.scale)?);
    }

    let mut shuffle_rng = rng::substream(config.seed, "train-shuffle");
    let mut adam = AdamState { m: vec![0.0; head.matrix.len()], v: vec![0.0; head.matrix.len()], t: 0 };
    let mut last_good: (AlignmentHead, TrainReport, Option<usize>) = (head.clone(), report.clone(), None);

    for epoch in 0..config.epochs {
        let mut batches: Vec<(usize, Vec<usize>)> = Vec::new();
        for (src, (samples, _)) in train_data.iter().enumerate() {
            let mut idx: Vec<usize> = (0..samples.len()).collect();
            idx.shuffle(&mut shuffle_rng);
            batches.extend(chunk_batches(&idx, config.batch_size).into_iter().map(|b| (src, b)));
        }
        if batches.is_empty() {
            return Err(AlignError::EmptyTrainSet);
        }
        batches.shuffle(&mut shuffle_rng);

        let (mut epoch_loss, mut epoch_weight) = (0.0, 0.0);
        let mut diverged = false;
        for (src, batch) in &batches {
            let (samples, weight) = &train_data[*src];
            let picked: Vec<PairSample<'_>> = batch.iter().map(|&i| samples[i]).collect();
            let (loss, mut grad) = match cosent_gradient(&picked, &head, config.scale) {
                Ok(r) => r,
                Err(AlignError::NaN | AlignError::Degenerate(_)) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                diverged = true;
                break;
            }
            for g in &mut grad {
                *g *= weight;
            }
            epoch_loss += weight * loss;
            epoch_weight += weight;
            step(&mut head, &grad, config, &mut adam);
            if head.matrix.iter().any(|x| !x.is_finite()) {
                diverged = true;
                break;
            }
        }
        let val = if diverged || !has_val {
            None
        } else {
            match mean_loss(&head, &val_data, config.batch_size, config.scale) {
                Ok(v) => Some(v),
                Err(AlignError::NaN | AlignError::Store(StoreError::ZeroVector(_))) => {
                    diverged = true;
                    None
                }
                Err(e) => return Err(e),
            }
        };
        let epoch_loss = epoch_loss / epoch_weight.max(f64::MIN_POSITIVE);
        if diverged || !epoch_loss.is_finite() || val.is_some_and(|v| !v.is_finite()) {
            let (good_head, mut good_report, good_epoch) = last_good;
            good_report.wall_time_secs = started.elapsed().as_secs_f64();
            return Err(AlignError::Diverged {
                epoch,
                last_good_epoch: good_epoch,
                last_good: Box::new((good_head, good_report)),
            });
        }
        report.train_loss.push(epoch_loss);
        if let Some(v) = val {
            report.val_loss.push(v);
        }
        report.head_checksum = head.checksum();
        log::debug!("epoch {epoch}: train {epoch_loss:.6} val {val:?}");
        last_good = (head.clone(), report.clone(), Some(epoch));
    }
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok((head, report))
}

fn step(head: &mut AlignmentHead, grad: &[f64], config: &TrainConfig, adam: &mut AdamState) {
    let lr = config.learning_rate;
    match config.optimizer {
        Optimizer::Sgd => {
            for (a, g) in head.matrix.iter_mut().zip(grad) {
                *a -= lr * g;
            }
        }
        Optimizer::Adam => {
            const B1: f64 = 0.9;
            const B2: f64 = 0.999;
            const EPS: f64 = 1e-8;
            adam.t += 1;
            let c1 = 1.0 - B1.powi(adam.t);
            let c2 = 1.0 - B2.powi(adam.t);
            for (k, (a, &g)) in head.matrix.iter_mut().zip(grad).enumerate() {
                adam.m[k] = B1 * adam.m[k] + (1.0 - B1) * g;
                adam.v[k] = B2 * adam.v[k] + (1.0 - B2) * g * g;
                *a -= lr * (adam.m[k] / c1) / ((adam.v[k] / c2).sqrt() + EPS);
            }
        }
    }
}

/// Pre-mapped copy of a store under a head, for repeated aligned scoring.
#[derive(Debug, Clone)]
pub struct MappedStore {
    ids: Vec<String>,
    rows: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
}

impl MappedStore {
    pub fn new(head: &AlignmentHead, store: &EmbeddingStore) -> Result<Self, AlignError> {
        let rows = store
            .ids()
            .par_iter()
            .map(|id| head.apply(store.require(id)?))
            .collect::<Result<Vec<_>, AlignError>>()?;
        let ids = store.ids().to_vec();
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(Self { ids, rows, index })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> + '_ {
        self.ids.iter().map(String::as_str).zip(self.rows.iter().map(Vec::as_slice))
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.rows[i].as_slice())
    }
}
