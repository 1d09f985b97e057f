//! `synth`, `ingest` and `stats`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Subcommand};
use serde_json::json;
use tempalign::corpus::{corpus_stats, SplitName, TaskLevel};
use tempalign::embedstore::EmbeddingStore;
use tempalign::fixture::{RotationConfig, RotationFixture};
use tempalign::pairgen::write_id_map;

use crate::config::{existing, need};
use crate::files::{load_corpus, write_bytes, write_json};
use crate::manifest::{manifest_path_for, Manifest};
use crate::Ctx;

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 500)]
    pub items: usize,
    /// Items in the training pool; the rest are held-out queries.
    #[arg(long, default_value_t = 300)]
    pub train_items: usize,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Low-resource language of the generated questions.
    #[arg(long, default_value = "ro")]
    pub language: String,
}

pub fn synth(ctx: &Ctx, a: SynthArgs) -> anyhow::Result<()> {
    let seed = a.seed.or(ctx.cfg.seed).unwrap_or(7);
    let config = RotationConfig {
        dim: a.dim,
        items: a.items,
        train_items: a.train_items,
        noise: a.noise,
        low_language: a.language.clone(),
        seed,
        ..Default::default()
    };
    let f = RotationFixture::generate(config)?;
    let dir = &a.out_dir;
    let mut files: Vec<(&str, PathBuf, Vec<u8>)> = vec![
        ("rich_corpus", dir.join("rich.jsonl"), f.rich.to_jsonl()),
        ("low_corpus", dir.join("low.jsonl"), f.low.to_jsonl()),
        ("low_train", dir.join("low_train.jsonl"), f.train_low().to_jsonl()),
        ("low_test", dir.join("low_test.jsonl"), f.heldout_low().to_jsonl()),
        ("rich_store", dir.join("rich.clts"), f.rich_store.to_bytes()),
        ("low_store", dir.join("low.clts"), f.low_store.to_bytes()),
        ("translated_store", dir.join("translated.clts"), f.translated_store.to_bytes()),
    ];
    let mut map = Vec::new();
    write_id_map(&mut map, &f.id_map)?;
    files.push(("id_map", dir.join("id_map.json"), map));
    let pairs: BTreeMap<String, String> = f.translation_pairs(&f.low).into_iter().collect();
    let mut buf = Vec::new();
    write_id_map(&mut buf, &pairs)?;
    files.push(("translation_pairs", dir.join("translation_pairs.json"), buf));

    let mut manifest = Manifest::new(
        "synth",
        Some(seed),
        json!({"dim": a.dim, "items": a.items, "train_items": a.train_items, "noise": a.noise, "language": a.language}),
    );
    for (name, path, bytes) in &files {
        write_bytes(path, bytes)?;
        manifest.output(name, path, dir)?;
    }
    manifest.write(&dir.join("synth.manifest.json"))?;
    println!("wrote {} files to {}", files.len(), dir.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(subcommand)]
    pub kind: IngestKind,
}

#[derive(Debug, Subcommand)]
pub enum IngestKind {
    /// Validate a JSONL corpus and write its canonical form.
    Corpus {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        language: Option<String>,
        #[arg(long)]
        level: Option<TaskLevel>,
        #[arg(long, default_value = "train")]
        split: SplitName,
    },
    /// Convert `{"id", "vector"}` JSONL into a binary store.
    Embeddings {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        dim: Option<usize>,
    },
}

pub fn ingest(ctx: &Ctx, a: IngestArgs) -> anyhow::Result<()> {
    match a.kind {
        IngestKind::Corpus { input, output, language, level, split } => {
            let input = existing(input, "input")?;
            let level = level.or(ctx.cfg.level.as_deref().map(str::parse).transpose()?);
            let language = language.or(ctx.cfg.language.clone());
            let mut manifest = Manifest::new("ingest-corpus", None, json!({"split": split.as_str()}));
            manifest.input("input", &input)?;
            ctx.check(&manifest)?;
            let corpus = load_corpus(&input, split, language.as_deref(), level)?;
            write_bytes(&output, &corpus.to_jsonl())?;
            finish(manifest, &output)?;
            println!("{} records ({} {})", corpus.len(), corpus.language, corpus.level);
        }
        IngestKind::Embeddings { input, output, dim } => {
            let input = existing(input, "input")?;
            let mut manifest = Manifest::new("ingest-embeddings", None, json!({"dim": dim}));
            manifest.input("input", &input)?;
            ctx.check(&manifest)?;
            let file = std::fs::File::open(&input)?;
            let store = EmbeddingStore::from_jsonl(std::io::BufReader::new(file), dim)?;
            write_bytes(&output, &store.to_bytes())?;
            finish(manifest, &output)?;
            println!("{} vectors of dimension {}", store.len(), store.dim());
        }
    }
    Ok(())
}

/// Records `output` and writes `<output>.manifest.json` next to it.
pub fn finish(mut manifest: Manifest, output: &std::path::Path) -> anyhow::Result<()> {
    let dir = output.parent().map(PathBuf::from).unwrap_or_default();
    manifest.output("output", output, &dir)?;
    manifest.write(&manifest_path_for(output))
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub language: Option<String>,
    #[arg(long)]
    pub level: Option<TaskLevel>,
    /// Also write the statistics as JSON.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn stats(ctx: &Ctx, a: StatsArgs) -> anyhow::Result<()> {
    let path = existing(need(a.corpus, ctx.cfg.paths.queries.clone(), "corpus")?, "corpus")?;
    let corpus = load_corpus(&path, SplitName::Train, a.language.as_deref(), a.level)?;
    let stats = corpus_stats(&corpus);
    let value = json!({
        "language": corpus.language,
        "level": corpus.level,
        "count": stats.count,
        "per_level": stats.per_level,
        "year_range": stats.year_range,
        "unparsed_answers": stats.unparsed_answers,
    });
    println!("{}", serde_json::to_string_pretty(&value)?);
    if let Some(out) = a.output {
        write_json(&out, &value)?;
    }
    Ok(())
}
