//! `tempalign`: command-line pipeline for cross-lingual temporal exemplar
//! retrieval.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 completion
//! backend error, 5 internal error.

mod config;
mod data;
mod error;
mod files;
mod manifest;
mod pipeline;
mod training;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::classify;
use crate::manifest::{verify_inputs, Manifest};

#[derive(Debug, Parser)]
#[command(name = "tempalign", version, about = "Cross-lingual in-context exemplar retrieval for temporal QA")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Verify inputs against the manifests of the stages that produced them.
    #[arg(long, global = true)]
    strict: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic parallel fixture with a known rotation.
    Synth(data::SynthArgs),
    /// Validate and convert a corpus or embedding file.
    Ingest(data::IngestArgs),
    /// Print corpus statistics.
    Stats(data::StatsArgs),
    /// Build scored training pairs (top-h plus random-w per query).
    Pairgen(training::PairgenArgs),
    /// Train the alignment head with the CoSENT loss.
    Train(training::TrainArgs),
    /// Select K exemplars per query.
    Retrieve(pipeline::RetrieveArgs),
    /// Assemble prompts from selections.
    Prompt(pipeline::PromptArgs),
    /// Retrieve, prompt, complete and score for every top_p value.
    Run(pipeline::RunArgs),
    /// Score predictions against gold answers.
    Score(pipeline::ScoreArgs),
    /// Repeat `run` for several K.
    AblateKshot(pipeline::KshotArgs),
    /// KL / prioritization / sample-size grid over h and w.
    AblateHw(training::HwArgs),
    /// Similarity histograms before and after training.
    Histograms(training::HistogramArgs),
}

pub struct Ctx {
    pub cfg: RunConfig,
    pub strict: bool,
}

impl Ctx {
    /// In strict mode, checks the stage's recorded inputs against their producers.
    pub fn check(&self, manifest: &Manifest) -> anyhow::Result<()> {
        if self.strict {
            let n = verify_inputs(manifest)?;
            log::info!("strict: {n} inputs verified against producer manifests");
        }
        Ok(())
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| error::config_error(format!("--threads: {e}")))?;
    }
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let ctx = Ctx { cfg, strict: cli.strict };
    match cli.command {
        Command::Synth(a) => data::synth(&ctx, a),
        Command::Ingest(a) => data::ingest(&ctx, a),
        Command::Stats(a) => data::stats(&ctx, a),
        Command::Pairgen(a) => training::pairgen(&ctx, a),
        Command::Train(a) => training::train(&ctx, a),
        Command::Retrieve(a) => pipeline::retrieve(&ctx, a),
        Command::Prompt(a) => pipeline::prompt(&ctx, a),
        Command::Run(a) => pipeline::run(&ctx, a),
        Command::Score(a) => pipeline::score(&ctx, a),
        Command::AblateKshot(a) => pipeline::ablate_kshot(&ctx, a),
        Command::AblateHw(a) => training::ablate_hw(&ctx, a),
        Command::Histograms(a) => training::histograms(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = classify(&err);
            eprintln!("error: {err:#}");
            ExitCode::from(kind as u8)
        }
    }
}
