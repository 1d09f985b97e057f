//! `retrieve`, `prompt`, `run`, `score` and `ablate-kshot`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::Context;
use clap::Args;
use serde::Serialize;
use serde_json::json;
use tempalign::aligner::AlignmentHead;
use tempalign::corpus::{CorpusSplit, QueryRecord, SplitName};
use tempalign::embedstore::EmbeddingStore;
use tempalign::evalkit::{
    aggregate, mann_whitney_one_tailed, read_scores, score_predictions, write_scores, Aggregate, Alternative,
};
use tempalign::llmgate::{
    complete_ordered, record_run, Cassette, CompletionBackend, CompletionRequest, LiveBackend, LiveConfig,
    ReplayBackend, DEFAULT_API_KEY_ENV, DEFAULT_IN_FLIGHT, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE, TOP_P_SWEEP,
};
use tempalign::promptkit::{assemble_prompt, AssembledPrompt, PromptTemplate};
use tempalign::retriever::{
    read_selections, strategy_report, write_selections, ContextSet, Exemplar, RetrievalStrategy, Retriever, RichPool,
    SelectOptions, SelectionRecord, DEFAULT_K,
};

use crate::config::{existing, need, need_file, opt_file};
use crate::data::finish;
use crate::error::{config_error, data_error};
use crate::files::{
    first_answer_line, load_corpus, load_head, load_id_map, load_store, read_jsonl, write_bytes, write_json,
    write_jsonl, PredictionRecord,
};
use crate::manifest::Manifest;
use crate::Ctx;

#[derive(Debug, Clone, Args)]
pub struct RetrievalArgs {
    /// Low-resource query records.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// Embeddings of the queries.
    #[arg(long)]
    pub low_store: Option<PathBuf>,
    /// Rich-language exemplar pool.
    #[arg(long)]
    pub rich_corpus: Option<PathBuf>,
    #[arg(long)]
    pub rich_store: Option<PathBuf>,
    /// random, cross-lingual, in-language or aligned.
    #[arg(long)]
    pub strategy: Option<RetrievalStrategy>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Alignment head (aligned strategy).
    #[arg(long)]
    pub head: Option<PathBuf>,
    /// Translated pool embeddings (in-language strategy).
    #[arg(long)]
    pub translated_store: Option<PathBuf>,
    #[arg(long)]
    pub id_map: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Order exemplars so the most similar one sits next to the query.
    #[arg(long)]
    pub most_similar_last: bool,
}

struct RetrievalPaths {
    queries: PathBuf,
    low_store: PathBuf,
    rich_corpus: PathBuf,
    rich_store: PathBuf,
    head: Option<PathBuf>,
    translated_store: Option<PathBuf>,
    id_map: Option<PathBuf>,
    strategy: RetrievalStrategy,
    k: usize,
    seed: u64,
    most_similar_last: bool,
}

impl RetrievalPaths {
    fn resolve(ctx: &Ctx, a: &RetrievalArgs) -> anyhow::Result<Self> {
        let p = &ctx.cfg.paths;
        let strategy = match (a.strategy, &ctx.cfg.strategy) {
            (Some(s), _) => s,
            (None, Some(s)) => s.parse().map_err(|e| config_error(format!("strategy: {e}")))?,
            (None, None) => RetrievalStrategy::Aligned,
        };
        let k = a.k.or(ctx.cfg.k).unwrap_or(DEFAULT_K);
        if k == 0 {
            return Err(config_error("--k must be at least 1"));
        }
        let out = Self {
            queries: need_file(a.queries.clone(), p.queries.clone(), "queries")?,
            low_store: need_file(a.low_store.clone(), p.low_store.clone(), "low-store")?,
            rich_corpus: need_file(a.rich_corpus.clone(), p.rich_corpus.clone(), "rich-corpus")?,
            rich_store: need_file(a.rich_store.clone(), p.rich_store.clone(), "rich-store")?,
            head: opt_file(a.head.clone(), p.head.clone(), "head")?,
            translated_store: opt_file(a.translated_store.clone(), p.translated_store.clone(), "translated-store")?,
            id_map: opt_file(a.id_map.clone(), p.id_map.clone(), "id-map")?,
            strategy,
            k,
            seed: a.seed.or(ctx.cfg.seed).unwrap_or(0),
            most_similar_last: a.most_similar_last,
        };
        match strategy {
            RetrievalStrategy::Aligned if out.head.is_none() => {
                return Err(config_error("strategy `aligned` needs --head"));
            }
            RetrievalStrategy::InLanguage if out.translated_store.is_none() || out.id_map.is_none() => {
                return Err(config_error("strategy `in-language` needs --translated-store and --id-map"));
            }
            _ => {}
        }
        Ok(out)
    }

    fn record(&self, manifest: &mut Manifest) -> anyhow::Result<()> {
        manifest.input("queries", &self.queries)?;
        manifest.input("low_store", &self.low_store)?;
        manifest.input("rich_corpus", &self.rich_corpus)?;
        manifest.input("rich_store", &self.rich_store)?;
        for (name, path) in [("head", &self.head), ("translated_store", &self.translated_store), ("id_map", &self.id_map)]
        {
            if let Some(path) = path {
                manifest.input(name, path)?;
            }
        }
        Ok(())
    }

    fn params(&self) -> serde_json::Value {
        json!({"strategy": self.strategy, "k": self.k, "most_similar_last": self.most_similar_last})
    }
}

/// Everything a retriever borrows.
struct Loaded {
    queries: CorpusSplit,
    low_store: EmbeddingStore,
    rich: CorpusSplit,
    rich_store: EmbeddingStore,
    head: Option<AlignmentHead>,
    translated_store: Option<EmbeddingStore>,
    id_map: Option<BTreeMap<String, String>>,
    seed: u64,
    most_similar_last: bool,
}

impl Loaded {
    fn load(paths: &RetrievalPaths) -> anyhow::Result<Self> {
        Ok(Self {
            queries: load_corpus(&paths.queries, SplitName::Test, None, None)?,
            low_store: load_store(&paths.low_store)?,
            rich: load_corpus(&paths.rich_corpus, SplitName::Train, None, None)?,
            rich_store: load_store(&paths.rich_store)?,
            head: paths.head.as_deref().map(load_head).transpose()?,
            translated_store: paths.translated_store.as_deref().map(load_store).transpose()?,
            id_map: paths.id_map.as_deref().map(load_id_map).transpose()?,
            seed: paths.seed,
            most_similar_last: paths.most_similar_last,
        })
    }

    fn retriever(&self, strategy: RetrievalStrategy) -> anyhow::Result<Retriever<'_>> {
        let options = SelectOptions {
            head: self.head.as_ref(),
            translated_store: self.translated_store.as_ref(),
            id_map: self.id_map.as_ref(),
            seed: Some(self.seed),
            allow_self: false,
            most_similar_last: self.most_similar_last,
        };
        let pool = RichPool { records: &self.rich, store: &self.rich_store };
        Ok(Retriever::new(strategy, &self.low_store, pool, options)?)
    }

    fn query_ids(&self) -> Vec<&str> {
        self.queries.records.iter().map(|r| r.id.as_str()).collect()
    }
}

fn template_for(path: Option<&Path>, queries: &CorpusSplit) -> anyhow::Result<PromptTemplate> {
    match path {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            PromptTemplate::parse(id, &text).map_err(|e| config_error(format!("template {}: {e}", path.display())))
        }
        None => PromptTemplate::builtin(queries.level, &queries.language).map_err(|e| config_error(e.to_string())),
    }
}

fn assemble_all(contexts: &[ContextSet], queries: &CorpusSplit, template: &PromptTemplate) -> anyhow::Result<Vec<AssembledPrompt>> {
    contexts
        .iter()
        .zip(&queries.records)
        .map(|(c, q)| assemble_prompt(c, q, template).map_err(Into::into))
        .collect()
}

fn write_selection_file(path: &Path, contexts: &[ContextSet]) -> anyhow::Result<()> {
    let records: Vec<SelectionRecord> = contexts.iter().map(ContextSet::to_selection).collect();
    let mut buf = Vec::new();
    write_selections(&mut buf, &records)?;
    write_bytes(path, &buf)
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    /// Selections JSONL.
    #[arg(long)]
    pub output: PathBuf,
    /// Second strategy to compare against.
    #[arg(long, requires = "report")]
    pub compare: Option<RetrievalStrategy>,
    /// Overlap report for `--compare`.
    #[arg(long, requires = "compare")]
    pub report: Option<PathBuf>,
}

pub fn retrieve(ctx: &Ctx, a: RetrieveArgs) -> anyhow::Result<()> {
    let paths = RetrievalPaths::resolve(ctx, &a.retrieval)?;
    let mut manifest = Manifest::new("retrieve", Some(paths.seed), paths.params());
    paths.record(&mut manifest)?;
    ctx.check(&manifest)?;
    let loaded = Loaded::load(&paths)?;
    let ids = loaded.query_ids();
    let retriever = loaded.retriever(paths.strategy)?;
    let contexts = retriever.select_many(&ids, paths.k)?;
    write_selection_file(&a.output, &contexts)?;
    if let (Some(other), Some(report_path)) = (a.compare, &a.report) {
        let second = loaded.retriever(other)?;
        let report = strategy_report(&ids, &retriever, &second, paths.k)?;
        println!("mean jaccard {} vs {}: {:.4}", paths.strategy, other, report.mean_jaccard);
        write_json(report_path, &report)?;
        let dir = a.output.parent().map(PathBuf::from).unwrap_or_default();
        manifest.output("report", report_path, &dir)?;
    }
    println!("{} selections ({}, k = {})", contexts.len(), paths.strategy, paths.k);
    finish(manifest, &a.output)
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    #[arg(long)]
    pub selections: PathBuf,
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub rich_corpus: Option<PathBuf>,
    /// Template file; the built-in for the query level and language otherwise.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Prompts JSONL.
    #[arg(long)]
    pub output: PathBuf,
}

/// Rebuilds the exemplar contexts recorded in a selections file.
fn contexts_from_selections(
    selections: &[SelectionRecord],
    queries: &CorpusSplit,
    rich: &CorpusSplit,
) -> anyhow::Result<Vec<ContextSet>> {
    let by_query: HashMap<&str, &SelectionRecord> = selections.iter().map(|s| (s.query_id.as_str(), s)).collect();
    let pool = rich.index();
    queries
        .records
        .iter()
        .map(|q| {
            let sel = by_query
                .get(q.id.as_str())
                .ok_or_else(|| data_error(format!("no selection for query `{}`", q.id)))?;
            let exemplars = sel
                .selected
                .iter()
                .map(|s| {
                    let r = pool
                        .get(s.id.as_str())
                        .ok_or_else(|| data_error(format!("selected id `{}` is not in the rich corpus", s.id)))?;
                    Ok(Exemplar { id: r.id.clone(), question: r.question.clone(), answer: r.answers[0].clone(), score: s.score })
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            Ok(ContextSet { query_id: q.id.clone(), strategy: sel.strategy, k: sel.k, exemplars })
        })
        .collect()
}

pub fn prompt(ctx: &Ctx, a: PromptArgs) -> anyhow::Result<()> {
    let p = &ctx.cfg.paths;
    let selections_path = existing(a.selections, "selections")?;
    let queries_path = need_file(a.queries, p.queries.clone(), "queries")?;
    let rich_path = need_file(a.rich_corpus, p.rich_corpus.clone(), "rich-corpus")?;
    let template_path = opt_file(a.template, p.template.clone(), "template")?;
    let mut manifest = Manifest::new("prompt", None, json!({}));
    manifest.input("selections", &selections_path)?;
    manifest.input("queries", &queries_path)?;
    manifest.input("rich_corpus", &rich_path)?;
    if let Some(t) = &template_path {
        manifest.input("template", t)?;
    }
    ctx.check(&manifest)?;

    let file = fs::File::open(&selections_path)?;
    let selections = read_selections(BufReader::new(file))?;
    let queries = load_corpus(&queries_path, SplitName::Test, None, None)?;
    let rich = load_corpus(&rich_path, SplitName::Train, None, None)?;
    let template = template_for(template_path.as_deref(), &queries)?;
    let contexts = contexts_from_selections(&selections, &queries, &rich)?;
    let prompts = assemble_all(&contexts, &queries, &template)?;
    write_jsonl(&a.output, &prompts)?;
    println!("{} prompts ({})", prompts.len(), template.id);
    finish(manifest, &a.output)
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Replay cassette (JSONL). Also the recording target with `--record`.
    #[arg(long)]
    pub cassette: Option<PathBuf>,
    /// Base URL of a completion endpoint, e.g. `http://host/v1`.
    #[arg(long)]
    pub base_url: Option<String>,
    /// Call the live endpoint for requests missing from the cassette and save them.
    #[arg(long, requires = "base_url", requires = "cassette")]
    pub record: bool,
    /// Replay misses yield empty completions instead of an error.
    #[arg(long)]
    pub lenient: bool,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub top_p: Option<Vec<f64>>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Concurrent completion requests.
    #[arg(long)]
    pub in_flight: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

enum Backend {
    Replay(PathBuf),
    Live(String),
    Record(String, PathBuf),
}

#[derive(Debug, Serialize)]
struct TopPRun {
    top_p: f64,
    #[serde(flatten)]
    aggregate: Aggregate,
}

#[derive(Debug, Serialize)]
struct RunReport {
    strategy: RetrievalStrategy,
    k: usize,
    mean_f1: f64,
    mean_em: f64,
    n: usize,
    runs: Vec<TopPRun>,
}

fn backend_for(ctx: &Ctx, a: &RunArgs) -> anyhow::Result<Backend> {
    let cassette = a.cassette.clone().or(ctx.cfg.paths.cassette.clone());
    let base_url = a.base_url.clone().or(ctx.cfg.base_url.clone()).filter(|u| !u.trim().is_empty());
    match (base_url, cassette) {
        (Some(url), Some(c)) if a.record => Ok(Backend::Record(url, c)),
        (Some(url), None) => Ok(Backend::Live(url)),
        (_, Some(c)) => Ok(Backend::Replay(existing(c, "cassette")?)),
        (None, None) => Err(config_error("no completion backend: give --cassette or --base-url")),
    }
}

fn top_p_dir(top_p: f64) -> String {
    format!("top_p-{top_p}")
}

/// Retrieve, prompt, complete and score once per top_p value under `out_dir`.
fn run_pipeline(ctx: &Ctx, a: &RunArgs, k_override: Option<usize>, out_dir: &Path) -> anyhow::Result<RunReport> {
    let backend = backend_for(ctx, a)?;
    let mut retrieval = a.retrieval.clone();
    if k_override.is_some() {
        retrieval.k = k_override;
    }
    let paths = RetrievalPaths::resolve(ctx, &retrieval)?;
    let template_path = opt_file(a.template.clone(), ctx.cfg.paths.template.clone(), "template")?;
    let model = need(a.model.clone(), ctx.cfg.model.clone(), "model")?;
    let top_ps = a.top_p.clone().or(ctx.cfg.top_p.clone()).unwrap_or(TOP_P_SWEEP.to_vec());
    let max_tokens = a.max_tokens.or(ctx.cfg.max_tokens).unwrap_or(DEFAULT_MAX_TOKENS);
    let temperature = a.temperature.or(ctx.cfg.temperature).unwrap_or(DEFAULT_TEMPERATURE);
    let in_flight = a.in_flight.or(ctx.cfg.in_flight).unwrap_or(DEFAULT_IN_FLIGHT);
    if top_ps.is_empty() {
        return Err(config_error("--top-p needs at least one value"));
    }

    let mut params = paths.params();
    params["model"] = json!(model);
    params["top_p"] = json!(top_ps);
    params["max_tokens"] = json!(max_tokens);
    params["temperature"] = json!(temperature);
    let mut manifest = Manifest::new("run", Some(paths.seed), params);
    paths.record(&mut manifest)?;
    if let Some(t) = &template_path {
        manifest.input("template", t)?;
    }
    if let Backend::Replay(c) = &backend {
        manifest.input("cassette", c)?;
    }
    ctx.check(&manifest)?;

    let loaded = Loaded::load(&paths)?;
    let template = template_for(template_path.as_deref(), &loaded.queries)?;
    let contexts = loaded.retriever(paths.strategy)?.select_many(&loaded.query_ids(), paths.k)?;
    let prompts = assemble_all(&contexts, &loaded.queries, &template)?;
    let selections_path = out_dir.join("selections.jsonl");
    let prompts_path = out_dir.join("prompts.jsonl");
    write_selection_file(&selections_path, &contexts)?;
    write_jsonl(&prompts_path, &prompts)?;
    manifest.output("selections", &selections_path, out_dir)?;
    manifest.output("prompts", &prompts_path, out_dir)?;

    let mut requests = Vec::with_capacity(prompts.len() * top_ps.len());
    for &top_p in &top_ps {
        for p in &prompts {
            let mut r = CompletionRequest::new(model.clone(), p.text.clone(), top_p);
            r.max_tokens = max_tokens;
            r.temperature = temperature;
            r.validate().map_err(|e| config_error(e.to_string()))?;
            requests.push(r);
        }
    }

    let live_config = |url: &str| {
        let mut cfg = LiveConfig::new(url)
            .with_env_key(ctx.cfg.api_key_env.as_deref().unwrap_or(DEFAULT_API_KEY_ENV));
        if let Some(secs) = ctx.cfg.timeout_secs {
            cfg.timeout = Duration::from_secs(secs);
        }
        cfg
    };
    let completions = match &backend {
        Backend::Live(url) => {
            let live = LiveBackend::new(live_config(url))?;
            complete_ordered(&live, &requests, in_flight)?
        }
        Backend::Record(url, path) => {
            let mut cassette = if path.is_file() { Cassette::load(path)? } else { Cassette::new() };
            let live = LiveBackend::new(live_config(url))?;
            let added = record_run(&requests, &live, &mut cassette, Some(path), in_flight)?;
            cassette.save(path)?;
            log::info!("recorded {added} new completions into {}", path.display());
            complete_ordered(&ReplayBackend::new(cassette, true), &requests, in_flight)?
        }
        Backend::Replay(path) => {
            let replay = ReplayBackend::new(Cassette::load(path)?, !a.lenient);
            let out = complete_ordered(&replay as &dyn CompletionBackend, &requests, in_flight)?;
            if replay.misses() > 0 {
                log::warn!("{} replay misses returned empty completions", replay.misses());
            }
            out
        }
    };

    let n = prompts.len();
    let mut runs = Vec::with_capacity(top_ps.len());
    for (i, &top_p) in top_ps.iter().enumerate() {
        let dir = out_dir.join(top_p_dir(top_p));
        let texts: Vec<String> = completions[i * n..(i + 1) * n].iter().map(|c| first_answer_line(c)).collect();
        let predictions: Vec<PredictionRecord> = loaded
            .queries
            .records
            .iter()
            .zip(&texts)
            .map(|(q, t)| PredictionRecord { query_id: q.id.clone(), prediction: t.clone() })
            .collect();
        let scores = score_predictions(&loaded.queries.records, &texts)?;
        let agg = aggregate(&scores);
        let mut buf = Vec::new();
        write_scores(&mut buf, &scores)?;
        let files = [
            ("predictions", dir.join("predictions.jsonl")),
            ("scores", dir.join("scores.jsonl")),
            ("aggregate", dir.join("aggregate.json")),
        ];
        write_jsonl(&files[0].1, &predictions)?;
        write_bytes(&files[1].1, &buf)?;
        write_json(&files[2].1, &agg)?;
        for (name, path) in &files {
            manifest.output(&format!("{}/{name}", top_p_dir(top_p)), path, out_dir)?;
        }
        runs.push(TopPRun { top_p, aggregate: agg });
    }
    let m = runs.len() as f64;
    let report = RunReport {
        strategy: paths.strategy,
        k: paths.k,
        mean_f1: runs.iter().map(|r| r.aggregate.mean_f1).sum::<f64>() / m,
        mean_em: runs.iter().map(|r| r.aggregate.mean_em).sum::<f64>() / m,
        n,
        runs,
    };
    let report_path = out_dir.join("aggregate.json");
    write_json(&report_path, &report)?;
    manifest.output("aggregate", &report_path, out_dir)?;
    manifest.write(&out_dir.join("run.manifest.json"))?;
    Ok(report)
}

fn out_dir_for(ctx: &Ctx, a: &RunArgs) -> anyhow::Result<PathBuf> {
    need(a.out_dir.clone(), ctx.cfg.paths.out_dir.clone(), "out-dir")
}

pub fn run(ctx: &Ctx, a: RunArgs) -> anyhow::Result<()> {
    let out_dir = out_dir_for(ctx, &a)?;
    let report = run_pipeline(ctx, &a, None, &out_dir)?;
    for r in &report.runs {
        println!("top_p {}: f1 {:.4} em {:.4}", r.top_p, r.aggregate.mean_f1, r.aggregate.mean_em);
    }
    println!("mean over top_p: f1 {:.4} em {:.4} (n = {})", report.mean_f1, report.mean_em, report.n);
    Ok(())
}

#[derive(Debug, Args)]
pub struct KshotArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub ks: Vec<usize>,
}

pub fn ablate_kshot(ctx: &Ctx, a: KshotArgs) -> anyhow::Result<()> {
    let out_dir = out_dir_for(ctx, &a.run)?;
    if a.ks.is_empty() || a.ks.contains(&0) {
        return Err(config_error("--ks needs values of at least 1"));
    }
    backend_for(ctx, &a.run)?;
    for &k in &a.ks {
        let report = run_pipeline(ctx, &a.run, Some(k), &out_dir.join(format!("k{k}")))?;
        write_json(&out_dir.join(format!("report-k{k}.json")), &report)?;
        println!("k = {k}: f1 {:.4} em {:.4}", report.mean_f1, report.mean_em);
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub queries: Option<PathBuf>,
    /// JSONL of `{"query_id", "prediction"}`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Per-example scores JSONL.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub aggregate: Option<PathBuf>,
    /// Scores of a baseline run; adds a one-tailed Mann-Whitney p-value on F1.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
}

pub fn score(ctx: &Ctx, a: ScoreArgs) -> anyhow::Result<()> {
    let queries_path = need_file(a.queries, ctx.cfg.paths.queries.clone(), "queries")?;
    let predictions_path = existing(a.predictions, "predictions")?;
    let baseline_path = opt_file(a.baseline, None, "baseline")?;
    let mut manifest = Manifest::new("score", None, json!({}));
    manifest.input("queries", &queries_path)?;
    manifest.input("predictions", &predictions_path)?;
    if let Some(b) = &baseline_path {
        manifest.input("baseline", b)?;
    }
    ctx.check(&manifest)?;

    let queries = load_corpus(&queries_path, SplitName::Test, None, None)?;
    let preds: Vec<PredictionRecord> = read_jsonl(&predictions_path)?;
    let by_id: HashMap<&str, &str> = preds.iter().map(|p| (p.query_id.as_str(), p.prediction.as_str())).collect();
    let texts = queries
        .records
        .iter()
        .map(|q: &QueryRecord| {
            by_id
                .get(q.id.as_str())
                .map(|s| s.to_string())
                .ok_or_else(|| data_error(format!("no prediction for query `{}`", q.id)))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let scores = score_predictions(&queries.records, &texts)?;
    let mut agg = aggregate(&scores);
    if let Some(b) = &baseline_path {
        let baseline = read_scores(BufReader::new(fs::File::open(b)?))?;
        let ours: Vec<f64> = scores.iter().map(|s| s.f1).collect();
        let theirs: Vec<f64> = baseline.iter().map(|s| s.f1).collect();
        agg.p_value = Some(mann_whitney_one_tailed(&ours, &theirs, Alternative::Greater)?.p_value);
    }
    let mut buf = Vec::new();
    write_scores(&mut buf, &scores)?;
    write_bytes(&a.output, &buf)?;
    if let Some(path) = &a.aggregate {
        write_json(path, &agg)?;
        let dir = a.output.parent().map(PathBuf::from).unwrap_or_default();
        manifest.output("aggregate", path, &dir)?;
    }
    println!("f1 {:.4} em {:.4} (n = {})", agg.mean_f1, agg.mean_em, agg.n);
    if let Some(p) = agg.p_value {
        println!("one-tailed p = {p:.4e}");
    }
    finish(manifest, &a.output)
}
