//! TOML run configuration. Command-line flags take precedence over it.

use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Deserialize;
use tempalign::aligner::Optimizer;

use crate::error::config_error;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub strategy: Option<String>,
    pub k: Option<usize>,
    pub h: Option<usize>,
    pub w: Option<usize>,
    pub top_p: Option<Vec<f64>>,
    pub model: Option<String>,
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
    pub max_tokens: Option<u32>,
    pub temperature: Option<f64>,
    pub in_flight: Option<usize>,
    pub timeout_secs: Option<u64>,
    pub language: Option<String>,
    pub level: Option<String>,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub train: TrainSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub queries: Option<PathBuf>,
    pub low_corpus: Option<PathBuf>,
    pub low_store: Option<PathBuf>,
    pub rich_corpus: Option<PathBuf>,
    pub rich_store: Option<PathBuf>,
    pub translated_store: Option<PathBuf>,
    pub id_map: Option<PathBuf>,
    pub head: Option<PathBuf>,
    pub cassette: Option<PathBuf>,
    pub template: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub scale: Option<f64>,
    pub optimizer: Option<Optimizer>,
    pub init_std: Option<f64>,
}

impl RunConfig {
    /// Parses `path`; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut cfg.paths;
        for slot in [
            &mut p.queries,
            &mut p.low_corpus,
            &mut p.low_store,
            &mut p.rich_corpus,
            &mut p.rich_store,
            &mut p.translated_store,
            &mut p.id_map,
            &mut p.head,
            &mut p.cassette,
            &mut p.template,
            &mut p.pairs,
            &mut p.out_dir,
        ] {
            if let Some(rel) = slot.as_mut() {
                if rel.is_relative() {
                    *rel = base.join(&*rel);
                }
            }
        }
        Ok(cfg)
    }
}

/// Flag value, else config value, else a config error naming the flag.
pub fn need<T>(flag: Option<T>, config: Option<T>, name: &str) -> anyhow::Result<T> {
    flag.or(config).ok_or_else(|| config_error(format!("missing --{name} (or `{}` in the config)", name.replace('-', "_"))))
}

/// Requires an existing input file.
pub fn existing(path: PathBuf, name: &str) -> anyhow::Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(config_error(format!("--{name}: {} does not exist", path.display())))
    }
}

pub fn need_file(flag: Option<PathBuf>, config: Option<PathBuf>, name: &str) -> anyhow::Result<PathBuf> {
    existing(need(flag, config, name)?, name)
}

pub fn opt_file(flag: Option<PathBuf>, config: Option<PathBuf>, name: &str) -> anyhow::Result<Option<PathBuf>> {
    flag.or(config).map(|p| existing(p, name)).transpose()
}
