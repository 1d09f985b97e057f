//! Synthetic parallel fixtures with a known cross-lingual rotation.
//!
//! Rich vectors `e_i` are random unit vectors. The low-resource vector of item
//! `i` is `R e_i` plus Gaussian noise, and its translated counterpart is
//! `R e_i` plus independent noise, so in-language similarity mirrors the rich
//! space while raw cross-lingual cosine sees the rotation.
//!
//! `R = Q B Qᵀ` for a random orthonormal `Q` and block-diagonal `B` made of
//! 2×2 plane rotations. Even planes turn by a small angle and odd planes by
//! nearly π. A single shared linear head cannot undo an arbitrary rotation
//! (its score is `uᵀ Rᵀ AᵀA v` with `AᵀA` positive semi-definite), but this
//! spectrum leaves enough trace for it to separate matches from non-matches.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{synth_l1_params, CorpusError, CorpusSplit, SplitName, TaskLevel};
use crate::embedstore::{EmbeddingStore, StoreError};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct RotationConfig {
    pub dim: usize,
    pub items: usize,
    /// Items `0..train_items` form the training pool; the rest are held out.
    pub train_items: usize,
    pub noise: f64,
    /// Half-width of the angle bands near 0 and near π.
    pub band: f64,
    pub low_language: String,
    pub seed: u64,
}

impl Default for RotationConfig {
    fn default() -> Self {
        Self { dim: 64, items: 500, train_items: 300, noise: 0.01, band: 0.3, low_language: "ro".into(), seed: 7 }
    }
}

#[derive(Debug, Clone)]
pub struct RotationFixture {
    pub config: RotationConfig,
    /// Row-major `dim × dim`.
    pub rotation: Vec<f64>,
    /// `D_r`: English records `en-NNNNNN`.
    pub rich: CorpusSplit,
    pub rich_store: EmbeddingStore,
    /// `D_l`: low-resource records `lo-NNNNNN`.
    pub low: CorpusSplit,
    pub low_store: EmbeddingStore,
    /// `D'_r` vectors for the training pool, ids `tr-NNNNNN`.
    pub translated_store: EmbeddingStore,
    /// `tr-` id to `en-` id.
    pub id_map: BTreeMap<String, String>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Random orthonormal matrix via modified Gram-Schmidt (run twice).
pub fn random_orthonormal(dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = (0..dim).map(|_| (0..dim).map(|_| gaussian(rng)).collect()).collect();
    for _ in 0..2 {
        for i in 0..dim {
            for j in 0..i {
                let dot: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
                let qj = q[j].clone();
                for (x, y) in q[i].iter_mut().zip(&qj) {
                    *x -= dot * y;
                }
            }
            let norm = q[i].iter().map(|x| x * x).sum::<f64>().sqrt();
            q[i].iter_mut().for_each(|x| *x /= norm);
        }
    }
    q
}

/// `Q B Qᵀ` with the banded plane angles described in the module docs.
pub fn banded_rotation(dim: usize, band: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let basis = random_orthonormal(dim, rng);
    // Columns of Q are the rows of `basis`.
    let mut b = vec![0.0; dim * dim];
    for k in 0..dim / 2 {
        let theta = if k % 2 == 0 { rng.random_range(0.0..band) } else { rng.random_range(PI - band..PI) };
        let (s, c) = theta.sin_cos();
        let (i, j) = (2 * k, 2 * k + 1);
        b[i * dim + i] = c;
        b[i * dim + j] = -s;
        b[j * dim + i] = s;
        b[j * dim + j] = c;
    }
    if dim % 2 == 1 {
        b[dim * dim - 1] = 1.0;
    }
    let mut r = vec![0.0; dim * dim];
    for row in 0..dim {
        for col in 0..dim {
            let mut acc = 0.0;
            for a in 0..dim {
                for c in 0..dim {
                    let bac = b[a * dim + c];
                    if bac != 0.0 {
                        acc += basis[a][row] * bac * basis[c][col];
                    }
                }
            }
            r[row * dim + col] = acc;
        }
    }
    r
}

fn apply(m: &[f64], v: &[f64]) -> Vec<f64> {
    m.chunks_exact(v.len()).map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid fixture config: {0}")]
    Config(String),
}

impl RotationFixture {
    pub fn generate(config: RotationConfig) -> Result<Self, FixtureError> {
        if config.dim < 2 || config.items == 0 || config.train_items > config.items {
            return Err(FixtureError::Config(format!(
                "dim {} items {} train {}",
                config.dim, config.items, config.train_items
            )));
        }
        let dim = config.dim;
        let mut rot_rng = rng::substream(config.seed, "fixture-rotation");
        let rotation = banded_rotation(dim, config.band, &mut rot_rng);
        let mut vec_rng = rng::substream(config.seed, "fixture-vectors");
        let params = synth_l1_params(config.items, 1000..=2000, config.seed)?;

        let mut rich = CorpusSplit::new("en", TaskLevel::L1, SplitName::Train);
        let mut low = CorpusSplit::new(config.low_language.clone(), TaskLevel::L1, SplitName::Train);
        let mut rich_store = EmbeddingStore::new(dim)?;
        let mut low_store = EmbeddingStore::new(dim)?;
        let mut translated_store = EmbeddingStore::new(dim)?;
        let mut id_map = BTreeMap::new();

        for (i, p) in params.iter().enumerate() {
            let en = format!("en-{i:06}");
            let lo = format!("lo-{i:06}");
            let tr = format!("tr-{i:06}");
            let mut e: Vec<f64> = (0..dim).map(|_| gaussian(&mut vec_rng)).collect();
            let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            e.iter_mut().for_each(|x| *x /= norm);
            let re = apply(&rotation, &e);
            let low_vec: Vec<f64> = re.iter().map(|x| x + config.noise * gaussian(&mut vec_rng)).collect();
            let tr_vec: Vec<f64> = re.iter().map(|x| x + config.noise * gaussian(&mut vec_rng)).collect();

            rich.records.push(p.to_record(en.clone(), "en")?);
            low.records.push(p.to_record(lo.clone(), &config.low_language)?);
            rich_store.insert(en.clone(), &to_f32(&e))?;
            low_store.insert(lo, &to_f32(&low_vec))?;
            if i < config.train_items {
                translated_store.insert(tr.clone(), &to_f32(&tr_vec))?;
                id_map.insert(tr, en);
            }
        }
        Ok(Self { config, rotation, rich, rich_store, low, low_store, translated_store, id_map })
    }

    /// Low-resource records in the training pool.
    pub fn train_low(&self) -> CorpusSplit {
        let mut split = CorpusSplit::new(self.low.language.clone(), self.low.level, SplitName::Train);
        split.records = self.low.records[..self.config.train_items].to_vec();
        split
    }

    /// Held-out low-resource records.
    pub fn heldout_low(&self) -> CorpusSplit {
        let mut split = CorpusSplit::new(self.low.language.clone(), self.low.level, SplitName::Test);
        split.records = self.low.records[self.config.train_items..].to_vec();
        split
    }

    /// Rich id aligned with a low-resource id.
    pub fn true_match(low_id: &str) -> Option<String> {
        low_id.strip_prefix("lo-").map(|n| format!("en-{n}"))
    }

    /// `(low id, rich id)` translation pairs for the given low records.
    pub fn translation_pairs(&self, low: &CorpusSplit) -> Vec<(String, String)> {
        low.records
            .iter()
            .filter_map(|r| Self::true_match(&r.id).map(|en| (r.id.clone(), en)))
            .collect()
    }
}
