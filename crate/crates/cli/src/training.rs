//! `pairgen`, `train`, `ablate-hw` and `histograms`.

use std::path::PathBuf;

use anyhow::Context;
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use tempalign::aligner::{train as train_head, AlignmentHead, Optimizer, TrainConfig, TrainSource};
use tempalign::corpus::SplitName;
use tempalign::evalkit::{
    embedding_shift_histograms, kl_divergence, prioritization_factor, select_hw, Histogram, HwCell, DEFAULT_BINS,
};
use tempalign::pairgen::{build_pairs, score_in_language, split_train_val, PairParams, DEFAULT_RANDOM_W, DEFAULT_TOP_H};

use crate::config::{need_file, opt_file};
use crate::data::finish;
use crate::files::{load_corpus, load_head, load_id_map, load_pairs, load_store, write_bytes, write_json};
use crate::manifest::Manifest;
use crate::Ctx;

#[derive(Debug, Args)]
pub struct PairgenArgs {
    /// Low-resource training questions (one query per record).
    #[arg(long)]
    pub low_corpus: Option<PathBuf>,
    #[arg(long)]
    pub low_store: Option<PathBuf>,
    /// Embeddings of the rich-language pool translated into the low language.
    #[arg(long)]
    pub translated_store: Option<PathBuf>,
    /// Translated id to rich id.
    #[arg(long)]
    pub id_map: Option<PathBuf>,
    #[arg(long)]
    pub h: Option<usize>,
    #[arg(long)]
    pub w: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: PathBuf,
    /// Hold out this fraction of pairs for validation.
    #[arg(long)]
    pub val_fraction: Option<f64>,
    #[arg(long, requires = "val_fraction")]
    pub val_output: Option<PathBuf>,
}

pub fn pairgen(ctx: &Ctx, a: PairgenArgs) -> anyhow::Result<()> {
    let p = &ctx.cfg.paths;
    let low_corpus = need_file(a.low_corpus, p.low_corpus.clone(), "low-corpus")?;
    let low_store = need_file(a.low_store, p.low_store.clone(), "low-store")?;
    let translated = need_file(a.translated_store, p.translated_store.clone(), "translated-store")?;
    let id_map = need_file(a.id_map, p.id_map.clone(), "id-map")?;
    let params = PairParams {
        h: a.h.or(ctx.cfg.h).unwrap_or(DEFAULT_TOP_H),
        w: a.w.or(ctx.cfg.w).unwrap_or(DEFAULT_RANDOM_W),
        seed: a.seed.or(ctx.cfg.seed).unwrap_or(0),
    };
    let mut manifest = Manifest::new(
        "pairgen",
        Some(params.seed),
        json!({"h": params.h, "w": params.w, "val_fraction": a.val_fraction}),
    );
    manifest.input("low_corpus", &low_corpus)?;
    manifest.input("low_store", &low_store)?;
    manifest.input("translated_store", &translated)?;
    manifest.input("id_map", &id_map)?;
    ctx.check(&manifest)?;

    let split = load_corpus(&low_corpus, SplitName::Train, None, None)?;
    let set = build_pairs(&split, &load_store(&low_store)?, &load_store(&translated)?, &load_id_map(&id_map)?, params)?;
    let dir = a.output.parent().map(PathBuf::from).unwrap_or_default();
    match a.val_fraction {
        Some(frac) => {
            let (train, val) = split_train_val(&set, frac, params.seed)?;
            let val_path = a.val_output.unwrap_or_else(|| a.output.with_extension("val.jsonl"));
            write_bytes(&a.output, &train.to_jsonl())?;
            write_bytes(&val_path, &val.to_jsonl())?;
            manifest.output("validation", &val_path, &dir)?;
            println!("{} training pairs, {} validation pairs", train.pairs.len(), val.pairs.len());
        }
        None => {
            write_bytes(&a.output, &set.to_jsonl())?;
            println!("{} pairs from {} queries", set.pairs.len(), split.len());
        }
    }
    finish(manifest, &a.output)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long)]
    pub val_pairs: Option<PathBuf>,
    #[arg(long)]
    pub low_store: Option<PathBuf>,
    #[arg(long)]
    pub rich_store: Option<PathBuf>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// CoSENT scale.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<Optimizer>,
    /// Standard deviation of the initial perturbation around the identity; 0 starts at the identity.
    #[arg(long)]
    pub init_std: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trained head (binary).
    #[arg(long)]
    pub output: PathBuf,
    /// Loss curves as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn parse_optimizer(s: &str) -> Result<Optimizer, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown optimizer `{s}` (sgd or adam)"))
}

pub fn train(ctx: &Ctx, a: TrainArgs) -> anyhow::Result<()> {
    let p = &ctx.cfg.paths;
    let t = &ctx.cfg.train;
    let pairs_path = need_file(a.pairs, p.pairs.clone(), "pairs")?;
    let low_path = need_file(a.low_store, p.low_store.clone(), "low-store")?;
    let rich_path = need_file(a.rich_store, p.rich_store.clone(), "rich-store")?;
    let val_path = opt_file(a.val_pairs, None, "val-pairs")?;
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        learning_rate: a.learning_rate.or(t.learning_rate).unwrap_or(defaults.learning_rate),
        epochs: a.epochs.or(t.epochs).unwrap_or(defaults.epochs),
        batch_size: a.batch_size.or(t.batch_size).unwrap_or(defaults.batch_size),
        scale: a.scale.or(t.scale).unwrap_or(defaults.scale),
        seed: a.seed.or(ctx.cfg.seed).unwrap_or(defaults.seed),
        optimizer: a.optimizer.or(t.optimizer).unwrap_or(defaults.optimizer),
    };
    let init_std = a.init_std.or(t.init_std).unwrap_or(1e-3);
    let mut manifest = Manifest::new("train", Some(config.seed), json!({"config": config, "init_std": init_std}));
    manifest.input("pairs", &pairs_path)?;
    manifest.input("low_store", &low_path)?;
    manifest.input("rich_store", &rich_path)?;
    if let Some(v) = &val_path {
        manifest.input("val_pairs", v)?;
    }
    ctx.check(&manifest)?;

    let pairs = load_pairs(&pairs_path)?;
    let val = val_path.as_deref().map(load_pairs).transpose()?;
    let low = load_store(&low_path)?;
    let rich = load_store(&rich_path)?;
    let head0 = if init_std > 0.0 {
        AlignmentHead::perturbed_identity(low.dim(), init_std, config.seed)
    } else {
        AlignmentHead::identity(low.dim())
    };
    let train_sources = [TrainSource::new(&pairs.pairs, &low, &rich)];
    let val_sources: Vec<TrainSource> = val.iter().map(|v| TrainSource::new(&v.pairs, &low, &rich)).collect();
    let (head, report) = train_head(&head0, &train_sources, &val_sources, &config)?;
    log::info!("trained in {:.2}s", report.wall_time_secs);
    write_bytes(&a.output, &head.to_bytes())?;
    if let Some(path) = &a.report {
        write_json(path, &report)?;
        let dir = a.output.parent().map(PathBuf::from).unwrap_or_default();
        manifest.output("report", path, &dir)?;
    }
    println!(
        "final train loss {:.6}, head checksum {:08x}",
        report.train_loss.last().copied().unwrap_or(f64::NAN),
        report.head_checksum
    );
    finish(manifest, &a.output)
}

#[derive(Debug, Args)]
pub struct HwArgs {
    #[arg(long)]
    pub low_corpus: Option<PathBuf>,
    #[arg(long)]
    pub low_store: Option<PathBuf>,
    #[arg(long)]
    pub translated_store: Option<PathBuf>,
    #[arg(long)]
    pub id_map: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "20,30,40")]
    pub hs: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "5,10,15")]
    pub ws: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Serialize)]
struct HwReport {
    cells: Vec<HwCell>,
    selected: Option<HwCell>,
}

/// Each cell compares the label distribution of its pair subsample with the
/// distribution of all in-language similarities.
pub fn ablate_hw(ctx: &Ctx, a: HwArgs) -> anyhow::Result<()> {
    let p = &ctx.cfg.paths;
    let low_corpus = need_file(a.low_corpus, p.low_corpus.clone(), "low-corpus")?;
    let low_path = need_file(a.low_store, p.low_store.clone(), "low-store")?;
    let tr_path = need_file(a.translated_store, p.translated_store.clone(), "translated-store")?;
    let map_path = need_file(a.id_map, p.id_map.clone(), "id-map")?;
    let seed = a.seed.or(ctx.cfg.seed).unwrap_or(0);
    let mut manifest = Manifest::new("ablate-hw", Some(seed), json!({"hs": a.hs, "ws": a.ws, "bins": a.bins}));
    manifest.input("low_corpus", &low_corpus)?;
    manifest.input("low_store", &low_path)?;
    manifest.input("translated_store", &tr_path)?;
    manifest.input("id_map", &map_path)?;
    ctx.check(&manifest)?;

    let split = load_corpus(&low_corpus, SplitName::Train, None, None)?;
    let low = load_store(&low_path)?;
    let translated = load_store(&tr_path)?;
    let id_map = load_id_map(&map_path)?;

    let mut full = Histogram::uniform(a.bins, -1.0, 1.0)?;
    for r in &split.records {
        for (_, s) in score_in_language(&low, &translated, &r.id)? {
            full.add(s.value())?;
        }
    }
    let grid: Vec<(usize, usize)> = a.hs.iter().flat_map(|&h| a.ws.iter().map(move |&w| (h, w))).collect();
    let cells = grid
        .par_iter()
        .map(|&(h, w)| -> anyhow::Result<HwCell> {
            let set = build_pairs(&split, &low, &translated, &id_map, PairParams { h, w, seed })?;
            let labels: Vec<f64> = set.pairs.iter().map(|p| p.label.value()).collect();
            let sub = Histogram::from_values(&labels, a.bins, -1.0, 1.0)?;
            Ok(HwCell {
                h,
                w,
                kl: kl_divergence(&sub, &full).with_context(|| format!("cell h={h} w={w}"))?,
                prioritization: prioritization_factor(h, w)?,
                sample_size: set.pairs.len(),
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let selected = select_hw(&cells).cloned();
    for c in &cells {
        println!("h={:<3} w={:<3} kl={:.6} pf={:.4} n={}", c.h, c.w, c.kl, c.prioritization, c.sample_size);
    }
    if let Some(s) = &selected {
        println!("selected h={} w={}", s.h, s.w);
    }
    write_json(&a.output, &HwReport { cells, selected })?;
    finish(manifest, &a.output)
}

#[derive(Debug, Args)]
pub struct HistogramArgs {
    #[arg(long)]
    pub low_store: Option<PathBuf>,
    #[arg(long)]
    pub rich_store: Option<PathBuf>,
    /// JSON object from low id to its rich translation id.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Head before training; the identity when omitted.
    #[arg(long)]
    pub before: Option<PathBuf>,
    #[arg(long)]
    pub after: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn histograms(ctx: &Ctx, a: HistogramArgs) -> anyhow::Result<()> {
    let p = &ctx.cfg.paths;
    let low_path = need_file(a.low_store, p.low_store.clone(), "low-store")?;
    let rich_path = need_file(a.rich_store, p.rich_store.clone(), "rich-store")?;
    let after_path = need_file(a.after, p.head.clone(), "after")?;
    let pairs_path = crate::config::existing(a.pairs, "pairs")?;
    let before_path = opt_file(a.before, None, "before")?;
    let seed = a.seed.or(ctx.cfg.seed).unwrap_or(0);
    let mut manifest = Manifest::new("histograms", Some(seed), json!({"bins": a.bins}));
    manifest.input("low_store", &low_path)?;
    manifest.input("rich_store", &rich_path)?;
    manifest.input("pairs", &pairs_path)?;
    manifest.input("after", &after_path)?;
    if let Some(b) = &before_path {
        manifest.input("before", b)?;
    }
    ctx.check(&manifest)?;

    let low = load_store(&low_path)?;
    let rich = load_store(&rich_path)?;
    let after = load_head(&after_path)?;
    let before = match &before_path {
        Some(b) => load_head(b)?,
        None => AlignmentHead::identity(after.dim()),
    };
    let pairs: Vec<(String, String)> = load_id_map(&pairs_path)?.into_iter().collect();
    let report = embedding_shift_histograms(&low, &rich, &pairs, &before, &after, seed, a.bins)?;
    let dir = &a.out_dir;
    let outputs = [
        ("positive_before", &report.positive.before),
        ("positive_after", &report.positive.after),
        ("antagonist_before", &report.antagonist.before),
        ("antagonist_after", &report.antagonist.after),
    ];
    for (name, hist) in outputs {
        let path = dir.join(format!("{name}.csv"));
        write_bytes(&path, hist.to_csv().as_bytes())?;
        manifest.output(name, &path, dir)?;
    }
    let summary = dir.join("shift.json");
    write_json(&summary, &report)?;
    manifest.output("shift", &summary, dir)?;
    manifest.write(&dir.join("histograms.manifest.json"))?;
    println!(
        "positive mean {:.4} -> {:.4}; antagonist mean {:.4} -> {:.4}",
        report.positive.mean_before,
        report.positive.mean_after,
        report.antagonist.mean_before,
        report.antagonist.mean_after
    );
    Ok(())
}
