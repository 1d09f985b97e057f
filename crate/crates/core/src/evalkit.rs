//! Scoring and statistics.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::aligner::{AlignError, AlignmentHead};
use crate::corpus::{QueryRecord, TaskLevel};
use crate::embedstore::{cosine_f64, EmbeddingStore, StoreError};
use crate::promptkit::normalize_answer;
use crate::rng;

pub const DEFAULT_BINS: usize = 50;
pub const KL_FLOOR: f64 = 1e-9;
pub const ANTAGONIST_THRESHOLD: f64 = 0.5;
/// Largest `n1 * n2` for which the exact U distribution is enumerated.
pub const EXACT_U_LIMIT: usize = 400;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no gold answers for `{0}`")]
    NoGold(String),
    #[error("predictions ({predictions}) and records ({records}) differ in length")]
    LengthMismatch { predictions: usize, records: usize },
    #[error("histograms have different bin edges")]
    EdgeMismatch,
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("invalid histogram range: {0}")]
    BadRange(String),
    #[error("h + w must be positive")]
    ZeroPool,
    #[error("sample is empty")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("no positive pairs")]
    NoPairs,
    #[error("no cross pair has predicted similarity at or below {0}")]
    NoAntagonists(f64),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// F1 / EM

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScore {
    pub query_id: String,
    pub f1: f64,
    pub em: u8,
    pub pred: String,
    /// Best-matching gold answer.
    pub gold: String,
    #[serde(skip)]
    pub gold_index: usize,
}

fn token_f1(pred: &[&str], gold: &[&str]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred == gold { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let p = common as f64 / pred.len() as f64;
    let r = common as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Word-level F1 and exact match against the best of `golds`.
pub fn f1_em(
    query_id: &str,
    prediction: &str,
    golds: &[String],
    level: TaskLevel,
    language: &str,
) -> Result<ExampleScore, EvalError> {
    if golds.is_empty() {
        return Err(EvalError::NoGold(query_id.to_string()));
    }
    let pred = normalize_answer(prediction, level, language);
    let pred_tokens: Vec<&str> = pred.split_whitespace().collect();
    let mut best: Option<(f64, u8, usize)> = None;
    for (i, g) in golds.iter().enumerate() {
        let gold = normalize_answer(g, level, language);
        let gold_tokens: Vec<&str> = gold.split_whitespace().collect();
        let em = u8::from(pred == gold);
        let f1 = if em == 1 { 1.0 } else { token_f1(&pred_tokens, &gold_tokens) };
        if best.is_none_or(|(bf, be, _)| (f1, em) > (bf, be)) {
            best = Some((f1, em, i));
        }
    }
    let (f1, em, gold_index) = best.expect("golds is non-empty");
    Ok(ExampleScore {
        query_id: query_id.to_string(),
        f1,
        em,
        pred: prediction.to_string(),
        gold: golds[gold_index].clone(),
        gold_index,
    })
}

/// Scores `predictions[i]` against `records[i]`, in parallel, order kept.
pub fn score_predictions(records: &[QueryRecord], predictions: &[String]) -> Result<Vec<ExampleScore>, EvalError> {
    if records.len() != predictions.len() {
        return Err(EvalError::LengthMismatch { predictions: predictions.len(), records: records.len() });
    }
    records
        .par_iter()
        .zip(predictions.par_iter())
        .map(|(r, p)| f1_em(&r.id, p, &r.answers, r.level, &r.language))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_f1: f64,
    pub mean_em: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
}

pub fn aggregate(scores: &[ExampleScore]) -> Aggregate {
    let n = scores.len();
    let denom = n.max(1) as f64;
    Aggregate {
        mean_f1: scores.iter().map(|s| s.f1).sum::<f64>() / denom,
        mean_em: scores.iter().map(|s| f64::from(s.em)).sum::<f64>() / denom,
        n,
        p_value: None,
    }
}

pub fn write_scores<W: Write>(mut out: W, scores: &[ExampleScore]) -> std::io::Result<()> {
    for s in scores {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_scores<R: BufRead>(reader: R) -> Result<Vec<ExampleScore>, EvalError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s: ExampleScore =
            serde_json::from_str(&line).map_err(|e| EvalError::Parse { line: idx + 1, message: e.to_string() })?;
        if !(0.0..=1.0).contains(&s.f1) || s.em > 1 || (s.em == 1 && s.f1 != 1.0) {
            return Err(EvalError::Parse { line: idx + 1, message: "inconsistent f1/em".into() });
        }
        out.push(s);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// BLEU-3

const BLEU_ORDER: usize = 3;

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct BleuStats {
    matches: [usize; BLEU_ORDER],
    totals: [usize; BLEU_ORDER],
    cand_len: usize,
    ref_len: usize,
}

impl BleuStats {
    fn of(candidate: &str, reference: &str) -> Self {
        let c: Vec<&str> = candidate.split_whitespace().collect();
        let r: Vec<&str> = reference.split_whitespace().collect();
        let mut s = BleuStats { cand_len: c.len(), ref_len: r.len(), ..Default::default() };
        for n in 1..=BLEU_ORDER {
            let rc = ngram_counts(&r, n);
            let cc = ngram_counts(&c, n);
            s.totals[n - 1] = c.len().saturating_sub(n - 1);
            s.matches[n - 1] = cc.iter().map(|(g, &k)| k.min(rc.get(g).copied().unwrap_or(0))).sum();
        }
        s
    }

    fn add(&mut self, o: &BleuStats) {
        for i in 0..BLEU_ORDER {
            self.matches[i] += o.matches[i];
            self.totals[i] += o.totals[i];
        }
        self.cand_len += o.cand_len;
        self.ref_len += o.ref_len;
    }

    /// Orders with no candidate n-grams are left out of the geometric mean.
    fn score(&self) -> f64 {
        if self.cand_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut orders = 0;
        for i in 0..BLEU_ORDER {
            if self.totals[i] == 0 {
                continue;
            }
            if self.matches[i] == 0 {
                return 0.0;
            }
            log_sum += (self.matches[i] as f64 / self.totals[i] as f64).ln();
            orders += 1;
        }
        let bp = (1.0 - self.ref_len as f64 / self.cand_len as f64).min(0.0).exp();
        bp * (log_sum / orders as f64).exp()
    }
}

/// Sentence BLEU-3 over whitespace tokens, unsmoothed, in [0, 1].
pub fn bleu3(candidate: &str, reference: &str) -> f64 {
    BleuStats::of(candidate, reference).score()
}

/// Mean of sentence scores over `(candidate, reference)` pairs.
pub fn mean_bleu3(pairs: &[(String, String)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    pairs.iter().map(|(c, r)| bleu3(c, r)).sum::<f64>() / pairs.len() as f64
}

/// Corpus BLEU-3: counts pooled before the precisions are taken.
pub fn corpus_bleu3(pairs: &[(String, String)]) -> f64 {
    let mut total = BleuStats::default();
    for (c, r) in pairs {
        total.add(&BleuStats::of(c, r));
    }
    total.score()
}

/// Percentage of `texts` whose detected language equals `expected`; 0 for no texts.
pub fn translation_success_rate<F>(texts: &[String], expected: &str, detect: F) -> f64
where
    F: Fn(&str) -> String,
{
    if texts.is_empty() {
        return 0.0;
    }
    let hits = texts.iter().filter(|t| detect(t) == expected).count();
    100.0 * hits as f64 / texts.len() as f64
}

// ---------------------------------------------------------------------------
// Histograms and KL

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl Histogram {
    pub fn uniform(bins: usize, lo: f64, hi: f64) -> Result<Self, EvalError> {
        if bins == 0 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(EvalError::BadRange(format!("{bins} bins over [{lo}, {hi}]")));
        }
        let edges = (0..=bins)
            .map(|i| if i == bins { hi } else { lo + (hi - lo) * i as f64 / bins as f64 })
            .collect();
        Ok(Self { edges, counts: vec![0; bins], total: 0 })
    }

    /// 50 bins over [-1, 1].
    pub fn similarity() -> Self {
        Self::uniform(DEFAULT_BINS, -1.0, 1.0).expect("valid range")
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// Values outside the range land in the end bins; the top edge is closed.
    pub fn add(&mut self, x: f64) -> Result<(), EvalError> {
        if !x.is_finite() {
            return Err(EvalError::NonFinite);
        }
        let lo = self.edges[0];
        let hi = self.edges[self.bins()];
        let pos = ((x - lo) / (hi - lo) * self.bins() as f64).floor();
        let bin = if pos < 0.0 { 0 } else { (pos as usize).min(self.bins() - 1) };
        self.counts[bin] += 1;
        self.total += 1;
        Ok(())
    }

    pub fn from_values(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Self, EvalError> {
        let mut h = Self::uniform(bins, lo, hi)?;
        for &v in values {
            h.add(v)?;
        }
        Ok(h)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let t = self.total.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / t).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        out
    }
}

/// `KL(P || Q)` in nats over probability vectors. Where `p > 0`, `q` is
/// floored at [`KL_FLOOR`]; `q` is then renormalized. Bins with `p = 0`
/// contribute nothing, so `KL(P || P)` is zero.
pub fn kl_divergence_probs(p: &[f64], q: &[f64]) -> Result<f64, EvalError> {
    if p.len() != q.len() {
        return Err(EvalError::EdgeMismatch);
    }
    let floored: Vec<f64> = p.iter().zip(q).map(|(&pi, &qi)| if pi > 0.0 { qi.max(KL_FLOOR) } else { qi }).collect();
    let z: f64 = floored.iter().sum();
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(&floored) {
        if pi > 0.0 {
            kl += pi * (pi / (qi / z)).ln();
        }
    }
    Ok(kl)
}

pub fn kl_divergence(p: &Histogram, q: &Histogram) -> Result<f64, EvalError> {
    if p.edges != q.edges {
        return Err(EvalError::EdgeMismatch);
    }
    if p.total == 0 || q.total == 0 {
        return Err(EvalError::EmptyHistogram);
    }
    kl_divergence_probs(&p.probabilities(), &q.probabilities())
}

// ---------------------------------------------------------------------------
// h / w ablation

pub fn prioritization_factor(h: usize, w: usize) -> Result<f64, EvalError> {
    if h + w == 0 {
        return Err(EvalError::ZeroPool);
    }
    Ok(h as f64 / (h + w) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HwCell {
    pub h: usize,
    pub w: usize,
    pub kl: f64,
    pub prioritization: f64,
    pub sample_size: usize,
}

/// Three-stage filter: the 5 lowest-KL cells, of those the 2 with the
/// highest prioritization factor, then the smallest sample size.
pub fn select_hw(cells: &[HwCell]) -> Option<&HwCell> {
    let mut by_kl: Vec<&HwCell> = cells.iter().collect();
    by_kl.sort_by(|a, b| a.kl.total_cmp(&b.kl).then((a.h, a.w).cmp(&(b.h, b.w))));
    by_kl.truncate(5);
    by_kl.sort_by(|a, b| b.prioritization.total_cmp(&a.prioritization).then((a.h, a.w).cmp(&(b.h, b.w))));
    by_kl.truncate(2);
    by_kl.into_iter().min_by(|a, b| a.sample_size.cmp(&b.sample_size).then((a.h, a.w).cmp(&(b.h, b.w))))
}

// ---------------------------------------------------------------------------
// Mann-Whitney U

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    /// `a` tends to be larger than `b`.
    Greater,
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UMethod {
    Exact,
    NormalApproximation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UTestResult {
    /// U for sample `a`: pairs with `a > b`, ties counting one half.
    pub u: f64,
    pub p_value: f64,
    pub method: UMethod,
    pub degenerate: bool,
}

/// Midranks (1-based) of the pooled sample, plus the tie-group sizes.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

/// Number of arrangements giving each U in `0..=n1*n2`.
fn exact_u_counts(n1: usize, n2: usize) -> Vec<u128> {
    // table[j][u]: arrangements of i items of `a` among j items of `b`, rolled over i.
    let max_u = n1 * n2;
    let mut prev: Vec<Vec<u128>> = (0..=n2)
        .map(|_| {
            let mut v = vec![0u128; max_u + 1];
            v[0] = 1;
            v
        })
        .collect();
    for i in 1..=n1 {
        let mut cur: Vec<Vec<u128>> = vec![vec![0u128; max_u + 1]; n2 + 1];
        cur[0][0] = 1;
        for j in 1..=n2 {
            for u in 0..=i * j {
                // Largest item is from `a` (beats all j of `b`) or from `b`.
                let from_a = if u >= j { prev[j][u - j] } else { 0 };
                cur[j][u] = from_a + cur[j - 1][u];
            }
        }
        prev = cur;
    }
    prev.swap_remove(n2)
}

pub fn mann_whitney_one_tailed(a: &[f64], b: &[f64], alternative: Alternative) -> Result<UTestResult, EvalError> {
    if a.is_empty() || b.is_empty() {
        return Err(EvalError::EmptySample);
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..n1].iter().sum();
    let u = rank_sum_a - (n1 * (n1 + 1)) as f64 / 2.0;
    let max_u = (n1 * n2) as f64;

    if ties.len() == 1 && ties[0] == n1 + n2 {
        return Ok(UTestResult { u, p_value: 1.0, method: UMethod::NormalApproximation, degenerate: true });
    }

    if ties.is_empty() && n1 * n2 <= EXACT_U_LIMIT {
        let counts = exact_u_counts(n1, n2);
        let total: u128 = counts.iter().sum();
        let u_obs = u.round() as usize;
        let tail: u128 = match alternative {
            Alternative::Greater => counts[u_obs..].iter().sum(),
            Alternative::Less => counts[..=u_obs].iter().sum(),
        };
        let p_value = (tail as f64 / total as f64).min(1.0);
        return Ok(UTestResult { u, p_value, method: UMethod::Exact, degenerate: false });
    }

    let n = (n1 + n2) as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let variance = (n1 * n2) as f64 / 12.0 * ((n + 1.0) - tie_term);
    let mean = max_u / 2.0;
    let sd = variance.sqrt();
    let z = match alternative {
        Alternative::Greater => (u - mean - 0.5) / sd,
        Alternative::Less => (mean - u - 0.5) / sd,
    };
    let p_value = (0.5 * erfc(z / std::f64::consts::SQRT_2)).clamp(f64::MIN_POSITIVE, 1.0);
    Ok(UTestResult { u, p_value, method: UMethod::NormalApproximation, degenerate: false })
}

// ---------------------------------------------------------------------------
// Embedding shift

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftHistograms {
    pub before: Histogram,
    pub after: Histogram,
    pub mean_before: f64,
    pub mean_after: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub positive: ShiftHistograms,
    pub antagonist: ShiftHistograms,
}

struct Mapped {
    before: Vec<Vec<f64>>,
    after: Vec<Vec<f64>>,
}

fn map_ids(
    ids: &[&str],
    store: &EmbeddingStore,
    before: &AlignmentHead,
    after: &AlignmentHead,
) -> Result<Mapped, EvalError> {
    let rows: Vec<(Vec<f64>, Vec<f64>)> = ids
        .par_iter()
        .map(|id| {
            let v = store.require(id)?;
            Ok((before.apply(v)?, after.apply(v)?))
        })
        .collect::<Result<_, EvalError>>()?;
    let (before, after) = rows.into_iter().unzip();
    Ok(Mapped { before, after })
}

fn shift(
    pairs: &[(usize, usize)],
    low: &Mapped,
    rich: &Mapped,
    bins: usize,
) -> Result<ShiftHistograms, EvalError> {
    let sims = |l: &[Vec<f64>], r: &[Vec<f64>]| -> Result<Vec<f64>, EvalError> {
        pairs.iter().map(|&(i, j)| Ok(cosine_f64(&l[i], &r[j])?.value())).collect()
    };
    let b = sims(&low.before, &rich.before)?;
    let a = sims(&low.after, &rich.after)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(ShiftHistograms {
        before: Histogram::from_values(&b, bins, -1.0, 1.0)?,
        after: Histogram::from_values(&a, bins, -1.0, 1.0)?,
        mean_before: mean(&b),
        mean_after: mean(&a),
        pairs: pairs.len(),
    })
}

/// Similarity histograms for translation pairs and for an equal number of
/// seeded antagonist cross pairs (pre-training similarity at most 0.5),
/// before and after training.
pub fn embedding_shift_histograms(
    low_store: &EmbeddingStore,
    rich_store: &EmbeddingStore,
    positive_pairs: &[(String, String)],
    before: &AlignmentHead,
    after: &AlignmentHead,
    seed: u64,
    bins: usize,
) -> Result<ShiftReport, EvalError> {
    if positive_pairs.is_empty() {
        return Err(EvalError::NoPairs);
    }
    let low_ids: Vec<&str> = positive_pairs.iter().map(|(l, _)| l.as_str()).collect();
    let rich_ids: Vec<&str> = positive_pairs.iter().map(|(_, r)| r.as_str()).collect();
    let low = map_ids(&low_ids, low_store, before, after)?;
    let rich = map_ids(&rich_ids, rich_store, before, after)?;
    let n = positive_pairs.len();
    let positives: Vec<(usize, usize)> = (0..n).map(|i| (i, i)).collect();

    let eligible = |i: usize, j: usize| -> Result<bool, EvalError> {
        Ok(rich_ids[i] != rich_ids[j]
            && cosine_f64(&low.before[i], &rich.before[j])?.value() <= ANTAGONIST_THRESHOLD)
    };
    let mut stream = rng::substream(seed, "antagonists");
    let antagonists: Vec<(usize, usize)> = if n * n <= 4_000_000 {
        let mut all = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && eligible(i, j)? {
                    all.push((i, j));
                }
            }
        }
        let take = n.min(all.len());
        rng::sample_indices(&mut stream, all.len(), take).into_iter().map(|k| all[k]).collect()
    } else {
        use rand::Rng;
        let mut seen = HashSet::new();
        let mut picked = Vec::with_capacity(n);
        let mut attempts = 0usize;
        while picked.len() < n && attempts < 100 * n {
            attempts += 1;
            let (i, j) = (stream.random_range(0..n), stream.random_range(0..n));
            if i != j && seen.insert((i, j)) && eligible(i, j)? {
                picked.push((i, j));
            }
        }
        picked
    };
    if antagonists.is_empty() {
        return Err(EvalError::NoAntagonists(ANTAGONIST_THRESHOLD));
    }
    if antagonists.len() < n {
        log::warn!("only {} antagonist pairs for {n} positives", antagonists.len());
    }
    Ok(ShiftReport {
        positive: shift(&positives, &low, &rich, bins)?,
        antagonist: shift(&antagonists, &low, &rich, bins)?,
    })
}
