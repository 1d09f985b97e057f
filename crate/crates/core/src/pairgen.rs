//! Scored cross-lingual training pairs.
//!
//! For each low-resource query the translated rich pool is scored with cosine
//! in the low-resource (in-language) space. The `h` best candidates are kept,
//! `w` more are drawn uniformly from the rest, and every translated id is then
//! swapped for the id of its original rich-language query. Labels are fixed
//! before the swap.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusSplit;
use crate::embedstore::{cosine, rank_order, EmbeddingStore, SimilarityScore, StoreError};
use crate::rng;

pub const DEFAULT_TOP_H: usize = 30;
pub const DEFAULT_RANDOM_W: usize = 10;
pub const DEFAULT_VAL_FRACTION: f64 = 0.10;

#[derive(Debug, Error)]
pub enum PairGenError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("translated store is empty")]
    EmptyPool,
    #[error("h + w must be at least 1")]
    NothingToSelect,
    #[error("id map has no entry for translated id `{0}`")]
    UnmappedId(String),
    #[error("id map sends both `{0}` and `{1}` to `{2}`")]
    NonInjectiveMap(String, String, String),
    #[error("low and translated stores differ in dimension ({0} vs {1})")]
    DimMismatch(usize, usize),
    #[error("validation fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("need at least 2 pairs to split, got {0}")]
    TooFewPairs(usize),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("training set is empty (no header line)")]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How a pair entered the training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    #[serde(rename = "top-h")]
    TopH,
    #[serde(rename = "random-w")]
    RandomW,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::TopH => "top-h",
            Provenance::RandomW => "random-w",
        })
    }
}

impl FromStr for Provenance {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "top-h" => Ok(Provenance::TopH),
            "random-w" => Ok(Provenance::RandomW),
            other => Err(format!("unknown provenance `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub low_id: String,
    pub rich_id: String,
    pub label: SimilarityScore,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSetHeader {
    pub h: usize,
    pub w: usize,
    pub seed: u64,
    #[serde(default)]
    pub low_source: String,
    #[serde(default)]
    pub rich_source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub header: TrainingSetHeader,
    pub pairs: Vec<ScoredPair>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairParams {
    pub h: usize,
    pub w: usize,
    pub seed: u64,
}

impl Default for PairParams {
    fn default() -> Self {
        Self { h: DEFAULT_TOP_H, w: DEFAULT_RANDOM_W, seed: 0 }
    }
}

/// Number of pairs one query contributes when the translated pool has `pool` entries.
pub fn pairs_per_query(h: usize, w: usize, pool: usize) -> usize {
    let top = h.min(pool);
    top + w.min(pool - top)
}

/// Cosine of `low_id` against every translated entry, in store order.
pub fn score_in_language(
    low_store: &EmbeddingStore,
    translated_store: &EmbeddingStore,
    low_id: &str,
) -> Result<Vec<(String, SimilarityScore)>, PairGenError> {
    if low_store.dim() != translated_store.dim() {
        return Err(PairGenError::DimMismatch(low_store.dim(), translated_store.dim()));
    }
    let q = low_store.require(low_id)?;
    translated_store
        .iter()
        .map(|(id, v)| Ok((id.to_string(), cosine(q, v)?)))
        .collect()
}

/// Reads an id map: one JSON object from translated id to rich id.
pub fn read_id_map<R: Read>(reader: R) -> Result<BTreeMap<String, String>, PairGenError> {
    serde_json::from_reader(reader).map_err(|e| PairGenError::Parse { line: e.line(), message: e.to_string() })
}

pub fn write_id_map<W: Write>(mut out: W, map: &BTreeMap<String, String>) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, map)?;
    out.write_all(b"\n")
}

/// Builds the scored pair set for every record of `low_split`.
pub fn build_pairs(
    low_split: &CorpusSplit,
    low_store: &EmbeddingStore,
    translated_store: &EmbeddingStore,
    rich_id_map: &BTreeMap<String, String>,
    params: PairParams,
) -> Result<TrainingSet, PairGenError> {
    if params.h + params.w == 0 {
        return Err(PairGenError::NothingToSelect);
    }
    if translated_store.is_empty() {
        return Err(PairGenError::EmptyPool);
    }
    check_id_map(translated_store, rich_id_map)?;

    let per_query: Vec<Vec<ScoredPair>> = low_split
        .records
        .par_iter()
        .map(|record| {
            pairs_for_query(&record.id, low_store, translated_store, rich_id_map, params)
        })
        .collect::<Result<_, _>>()?;

    Ok(TrainingSet {
        header: TrainingSetHeader {
            h: params.h,
            w: params.w,
            seed: params.seed,
            low_source: format!("{}/{}/{}", low_split.language, low_split.level, low_split.split),
            rich_source: String::new(),
        },
        pairs: per_query.into_iter().flatten().collect(),
    })
}

fn check_id_map(
    translated: &EmbeddingStore,
    map: &BTreeMap<String, String>,
) -> Result<(), PairGenError> {
    let mut seen: HashMap<&str, &str> = HashMap::new();
    for id in translated.ids() {
        let rich = map.get(id).ok_or_else(|| PairGenError::UnmappedId(id.clone()))?;
        if let Some(prev) = seen.insert(rich.as_str(), id.as_str()) {
            return Err(PairGenError::NonInjectiveMap(prev.into(), id.clone(), rich.clone()));
        }
    }
    Ok(())
}

fn pairs_for_query(
    low_id: &str,
    low_store: &EmbeddingStore,
    translated_store: &EmbeddingStore,
    map: &BTreeMap<String, String>,
    params: PairParams,
) -> Result<Vec<ScoredPair>, PairGenError> {
    let mut scored = score_in_language(low_store, translated_store, low_id)?;
    scored.sort_by(|a, b| rank_order(a.1.value(), &a.0, b.1.value(), &b.0));

    let top = params.h.min(scored.len());
    let rest = &scored[top..];
    let mut out = Vec::with_capacity(pairs_per_query(params.h, params.w, scored.len()));
    let emit = |(id, label): &(String, SimilarityScore), provenance| ScoredPair {
        low_id: low_id.to_string(),
        rich_id: map[id].clone(),
        label: *label,
        provenance,
    };
    out.extend(scored[..top].iter().map(|c| emit(c, Provenance::TopH)));
    if params.w > 0 && !rest.is_empty() {
        let mut stream = rng::substream(params.seed, low_id);
        for i in rng::sample_indices(&mut stream, rest.len(), params.w) {
            out.push(emit(&rest[i], Provenance::RandomW));
        }
    }
    Ok(out)
}

/// Seeded disjoint split into (train, validation). Pairs keep their original
/// relative order inside each part.
pub fn split_train_val(
    set: &TrainingSet,
    val_fraction: f64,
    seed: u64,
) -> Result<(TrainingSet, TrainingSet), PairGenError> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(PairGenError::BadFraction(val_fraction));
    }
    let n = set.pairs.len();
    if n < 2 {
        return Err(PairGenError::TooFewPairs(n));
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    let mut is_val = vec![false; n];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let (mut train, mut val) = (Vec::with_capacity(n - n_val), Vec::with_capacity(n_val));
    for (i, p) in set.pairs.iter().enumerate() {
        if is_val[i] { val.push(p.clone()) } else { train.push(p.clone()) }
    }
    let part = |pairs| TrainingSet { header: set.header.clone(), pairs };
    Ok((part(train), part(val)))
}

impl TrainingSet {
    /// Header line then one pair per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        serde_json::to_writer(&mut out, &self.header)?;
        out.write_all(b"\n")?;
        for p in &self.pairs {
            serde_json::to_writer(&mut out, p)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self, PairGenError> {
        let mut header = None;
        let mut pairs = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let bad = |e: serde_json::Error| PairGenError::Parse { line: line_no, message: e.to_string() };
            if header.is_none() {
                header = Some(serde_json::from_str::<TrainingSetHeader>(&line).map_err(bad)?);
                continue;
            }
            let pair: ScoredPair = serde_json::from_str(&line).map_err(bad)?;
            if !(-1.0..=1.0).contains(&pair.label.value()) {
                return Err(PairGenError::Parse { line: line_no, message: "label outside [-1, 1]".into() });
            }
            if !seen.insert((pair.low_id.clone(), pair.rich_id.clone())) {
                return Err(PairGenError::Parse {
                    line: line_no,
                    message: format!("duplicate pair ({}, {})", pair.low_id, pair.rich_id),
                });
            }
            pairs.push(pair);
        }
        Ok(Self { header: header.ok_or(PairGenError::MissingHeader)?, pairs })
    }

    /// Pairs grouped by low-resource query id, in order of first appearance.
    pub fn by_query(&self) -> Vec<(&str, Vec<&ScoredPair>)> {
        let mut order: Vec<&str> = Vec::new();
        let mut groups: HashMap<&str, Vec<&ScoredPair>> = HashMap::new();
        for p in &self.pairs {
            groups
                .entry(p.low_id.as_str())
                .or_insert_with(|| {
                    order.push(p.low_id.as_str());
                    Vec::new()
                })
                .push(p);
        }
        order.into_iter().map(|id| (id, groups.remove(id).unwrap_or_default())).collect()
    }
}
