//! K-shot exemplar selection for a low-resource query.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aligner::{AlignError, AlignmentHead, MappedStore};
use crate::corpus::{CorpusSplit, QueryRecord};
use crate::embedstore::{cosine_f64, select_top_k, EmbeddingStore, Hit, SimilarityScore, StoreError};
use crate::rng;

pub const DEFAULT_K: usize = 3;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error("strategy `{strategy}` requires {what}")]
    MissingPrerequisite { strategy: RetrievalStrategy, what: &'static str },
    #[error("id `{0}` does not resolve to a rich-language record")]
    UnresolvedId(String),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no candidates left after excluding the query")]
    EmptyPool,
    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetrievalStrategy {
    /// Seeded uniform sample.
    Random,
    /// Cosine between the query and rich-language embeddings.
    CrossLingual,
    /// Cosine against translated exemplars, mapped back to the originals.
    InLanguage,
    /// Cosine under a trained alignment head.
    Aligned,
}

impl RetrievalStrategy {
    pub const ALL: [RetrievalStrategy; 4] = [
        RetrievalStrategy::Random,
        RetrievalStrategy::CrossLingual,
        RetrievalStrategy::InLanguage,
        RetrievalStrategy::Aligned,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RetrievalStrategy::Random => "random",
            RetrievalStrategy::CrossLingual => "cross-lingual",
            RetrievalStrategy::InLanguage => "in-language",
            RetrievalStrategy::Aligned => "aligned",
        }
    }
}

impl fmt::Display for RetrievalStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RetrievalStrategy {
    type Err = RetrievalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| RetrievalError::UnknownStrategy(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exemplar {
    pub id: String,
    pub question: String,
    pub answer: String,
    /// `None` for the random strategy.
    pub score: Option<f64>,
}

/// Selected exemplars, in prompt order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSet {
    pub query_id: String,
    pub strategy: RetrievalStrategy,
    pub k: usize,
    pub exemplars: Vec<Exemplar>,
}

impl ContextSet {
    pub fn ids(&self) -> Vec<&str> {
        self.exemplars.iter().map(|e| e.id.as_str()).collect()
    }

    pub fn to_selection(&self) -> SelectionRecord {
        SelectionRecord {
            query_id: self.query_id.clone(),
            strategy: self.strategy,
            k: self.k,
            selected: self
                .exemplars
                .iter()
                .map(|e| SelectedId { id: e.id.clone(), score: e.score })
                .collect(),
        }
    }
}

/// Rich-language pool: `D_r` and its embeddings.
#[derive(Debug, Clone, Copy)]
pub struct RichPool<'a> {
    pub records: &'a CorpusSplit,
    pub store: &'a EmbeddingStore,
}

#[derive(Debug, Clone, Default)]
pub struct SelectOptions<'a> {
    pub head: Option<&'a AlignmentHead>,
    pub translated_store: Option<&'a EmbeddingStore>,
    /// Translated id to original rich id.
    pub id_map: Option<&'a BTreeMap<String, String>>,
    pub seed: Option<u64>,
    /// Keep a candidate whose id equals the query id.
    pub allow_self: bool,
    /// Put the most similar exemplar last instead of first.
    pub most_similar_last: bool,
}

/// A strategy bound to its stores, with aligned vectors precomputed.
pub struct Retriever<'a> {
    strategy: RetrievalStrategy,
    low_store: &'a EmbeddingStore,
    pool: RichPool<'a>,
    options: SelectOptions<'a>,
    records: HashMap<&'a str, &'a QueryRecord>,
    mapped: Option<MappedStore>,
}

impl<'a> Retriever<'a> {
    pub fn new(
        strategy: RetrievalStrategy,
        low_store: &'a EmbeddingStore,
        pool: RichPool<'a>,
        options: SelectOptions<'a>,
    ) -> Result<Self, RetrievalError> {
        let missing = |what| RetrievalError::MissingPrerequisite { strategy, what };
        let mut mapped = None;
        match strategy {
            RetrievalStrategy::Random => {
                options.seed.ok_or_else(|| missing("a seed"))?;
            }
            RetrievalStrategy::CrossLingual => {}
            RetrievalStrategy::InLanguage => {
                options.translated_store.ok_or_else(|| missing("a translated store"))?;
                options.id_map.ok_or_else(|| missing("an id map"))?;
            }
            RetrievalStrategy::Aligned => {
                let head = options.head.ok_or_else(|| missing("an alignment head"))?;
                mapped = Some(MappedStore::new(head, pool.store)?);
            }
        }
        let records = pool.records.records.iter().map(|r| (r.id.as_str(), r)).collect();
        Ok(Self { strategy, low_store, pool, options, records, mapped })
    }

    pub fn strategy(&self) -> RetrievalStrategy {
        self.strategy
    }

    fn exemplar(&self, id: &str, score: Option<f64>) -> Result<Exemplar, RetrievalError> {
        let r = self.records.get(id).ok_or_else(|| RetrievalError::UnresolvedId(id.to_string()))?;
        Ok(Exemplar {
            id: r.id.clone(),
            question: r.question.clone(),
            answer: r.answers[0].clone(),
            score,
        })
    }

    /// Ranked `(rich id, score)` without record lookup.
    pub fn rank(&self, query_id: &str, k: usize) -> Result<Vec<(String, Option<f64>)>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let keep = |id: &str| self.options.allow_self || id != query_id;
        let hits = |hits: Vec<Hit>| hits.into_iter().map(|h| (h.id, Some(h.score.value()))).collect();
        let ranked: Vec<(String, Option<f64>)> = match self.strategy {
            RetrievalStrategy::Random => {
                let ids: Vec<&str> =
                    self.pool.records.records.iter().map(|r| r.id.as_str()).filter(|id| keep(id)).collect();
                if ids.is_empty() {
                    return Err(RetrievalError::EmptyPool);
                }
                let seed = self.options.seed.unwrap_or_default();
                let mut stream = rng::substream(seed, &format!("random:{query_id}"));
                rng::sample_indices(&mut stream, ids.len(), k)
                    .into_iter()
                    .map(|i| (ids[i].to_string(), None))
                    .collect()
            }
            RetrievalStrategy::CrossLingual => {
                let q = self.low_store.require(query_id)?;
                let exclude: HashSet<&str> =
                    if self.options.allow_self { HashSet::new() } else { [query_id].into_iter().collect() };
                hits(self.pool.store.top_k(q, k, &exclude).map_err(empty_pool)?)
            }
            RetrievalStrategy::InLanguage => {
                let translated = self.options.translated_store.expect("checked in new");
                let map = self.options.id_map.expect("checked in new");
                let q = self.low_store.require(query_id)?;
                let mut exclude = HashSet::new();
                if !self.options.allow_self {
                    for id in translated.ids() {
                        if id == query_id || map.get(id).is_some_and(|r| r == query_id) {
                            exclude.insert(id.as_str());
                        }
                    }
                }
                translated
                    .top_k(q, k, &exclude)
                    .map_err(empty_pool)?
                    .into_iter()
                    .map(|h| {
                        let rich = map.get(&h.id).ok_or_else(|| RetrievalError::UnresolvedId(h.id.clone()))?;
                        Ok((rich.clone(), Some(h.score.value())))
                    })
                    .collect::<Result<_, RetrievalError>>()?
            }
            RetrievalStrategy::Aligned => {
                let head = self.options.head.expect("checked in new");
                let mapped = self.mapped.as_ref().expect("built in new");
                let q = head.apply(self.low_store.require(query_id)?)?;
                let mut scored = Vec::with_capacity(self.pool.store.len());
                for (id, row) in mapped.iter() {
                    if keep(id) {
                        let s = cosine_f64(&q, row).map_err(|e| match e {
                            StoreError::ZeroVector(_) => StoreError::ZeroVector(Some(id.to_string())),
                            other => other,
                        })?;
                        scored.push((id, s.value()));
                    }
                }
                if scored.is_empty() {
                    return Err(RetrievalError::EmptyPool);
                }
                select_top_k(scored, k)
                    .into_iter()
                    .map(|(id, s)| (id.to_string(), Some(SimilarityScore::new(s).value())))
                    .collect()
            }
        };
        Ok(ranked)
    }

    pub fn select(&self, query_id: &str, k: usize) -> Result<ContextSet, RetrievalError> {
        let mut exemplars = self
            .rank(query_id, k)?
            .into_iter()
            .map(|(id, score)| self.exemplar(&id, score))
            .collect::<Result<Vec<_>, _>>()?;
        if self.options.most_similar_last {
            exemplars.reverse();
        }
        Ok(ContextSet { query_id: query_id.to_string(), strategy: self.strategy, k, exemplars })
    }

    /// Selections for many queries, in input order.
    pub fn select_many(&self, query_ids: &[&str], k: usize) -> Result<Vec<ContextSet>, RetrievalError> {
        query_ids.par_iter().map(|q| self.select(q, k)).collect()
    }
}

fn empty_pool(e: StoreError) -> RetrievalError {
    match e {
        StoreError::EmptyCandidates => RetrievalError::EmptyPool,
        other => other.into(),
    }
}

/// One-shot convenience over [`Retriever`].
pub fn select_examples(
    query_id: &str,
    low_store: &EmbeddingStore,
    pool: RichPool<'_>,
    strategy: RetrievalStrategy,
    k: usize,
    options: SelectOptions<'_>,
) -> Result<ContextSet, RetrievalError> {
    Retriever::new(strategy, low_store, pool, options)?.select(query_id, k)
}

// ---------------------------------------------------------------------------
// Strategy comparison

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOverlap {
    pub query_id: String,
    pub jaccard: f64,
    /// Mean selected score of the first strategy minus that of the second.
    pub score_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyReport {
    pub first: RetrievalStrategy,
    pub second: RetrievalStrategy,
    pub k: usize,
    pub per_query: Vec<QueryOverlap>,
    pub mean_jaccard: f64,
    pub mean_score_gap: Option<f64>,
}

pub fn jaccard(a: &[&str], b: &[&str]) -> f64 {
    let a: HashSet<&str> = a.iter().copied().collect();
    let b: HashSet<&str> = b.iter().copied().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

fn mean_score(c: &ContextSet) -> Option<f64> {
    let scores: Option<Vec<f64>> = c.exemplars.iter().map(|e| e.score).collect();
    scores.filter(|s| !s.is_empty()).map(|s| s.iter().sum::<f64>() / s.len() as f64)
}

pub fn strategy_report(
    query_ids: &[&str],
    first: &Retriever<'_>,
    second: &Retriever<'_>,
    k: usize,
) -> Result<StrategyReport, RetrievalError> {
    let mut per_query = Vec::with_capacity(query_ids.len());
    for q in query_ids {
        let a = first.select(q, k)?;
        let b = second.select(q, k)?;
        let gap = mean_score(&a).zip(mean_score(&b)).map(|(x, y)| x - y);
        per_query.push(QueryOverlap { query_id: q.to_string(), jaccard: jaccard(&a.ids(), &b.ids()), score_gap: gap });
    }
    let n = per_query.len().max(1) as f64;
    let mean_jaccard = per_query.iter().map(|q| q.jaccard).sum::<f64>() / n;
    let gaps: Option<Vec<f64>> = per_query.iter().map(|q| q.score_gap).collect();
    let mean_score_gap = gaps.filter(|g| !g.is_empty()).map(|g| g.iter().sum::<f64>() / g.len() as f64);
    Ok(StrategyReport {
        first: first.strategy(),
        second: second.strategy(),
        k,
        per_query,
        mean_jaccard,
        mean_score_gap,
    })
}

// ---------------------------------------------------------------------------
// Selection dump

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedId {
    pub id: String,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub query_id: String,
    pub strategy: RetrievalStrategy,
    pub k: usize,
    pub selected: Vec<SelectedId>,
}

pub fn write_selections<W: Write>(mut out: W, records: &[SelectionRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_selections<R: BufRead>(reader: R) -> Result<Vec<SelectionRecord>, RetrievalError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: SelectionRecord = serde_json::from_str(&line)
            .map_err(|e| RetrievalError::Parse { line: idx + 1, message: e.to_string() })?;
        if rec.selected.len() > rec.k {
            return Err(RetrievalError::Parse {
                line: idx + 1,
                message: format!("{} selections exceed k = {}", rec.selected.len(), rec.k),
            });
        }
        out.push(rec);
    }
    Ok(out)
}
