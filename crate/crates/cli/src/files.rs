//! Loading and writing pipeline artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use tempalign::aligner::AlignmentHead;
use tempalign::corpus::{parse_corpus, CorpusSplit, QueryRecord, SplitName, TaskLevel};
use tempalign::embedstore::EmbeddingStore;
use tempalign::pairgen::{read_id_map, TrainingSet};

use crate::error::data_error;

pub fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    ensure_parent(path)?;
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    write_bytes(path, &buf)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).with_context(|| format!("{} line {}", path.display(), idx + 1))?,
        );
    }
    Ok(out)
}

/// Loads a corpus. Language and level default to those of the first record.
pub fn load_corpus(
    path: &Path,
    split: SplitName,
    language: Option<&str>,
    level: Option<TaskLevel>,
) -> anyhow::Result<CorpusSplit> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let first: Option<QueryRecord> = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .and_then(|l| serde_json::from_str(l).ok());
    let language = language.map(str::to_string).or_else(|| first.as_ref().map(|r| r.language.clone()));
    let level = level.or(first.as_ref().map(|r| r.level));
    let (Some(language), Some(level)) = (language, level) else {
        return Err(data_error(format!("{}: cannot infer language and level from an empty corpus", path.display())));
    };
    parse_corpus(text.as_bytes(), &language, level, split).with_context(|| format!("parsing {}", path.display()))
}

pub fn load_store(path: &Path) -> anyhow::Result<EmbeddingStore> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    EmbeddingStore::from_bytes(&bytes).with_context(|| format!("decoding store {}", path.display()))
}

pub fn load_head(path: &Path) -> anyhow::Result<AlignmentHead> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    AlignmentHead::from_bytes(&bytes).with_context(|| format!("decoding head {}", path.display()))
}

pub fn load_id_map(path: &Path) -> anyhow::Result<BTreeMap<String, String>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_id_map(BufReader::new(file)).with_context(|| format!("parsing id map {}", path.display()))
}

pub fn load_pairs(path: &Path) -> anyhow::Result<TrainingSet> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    TrainingSet::read_jsonl(BufReader::new(file)).with_context(|| format!("parsing pairs {}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub query_id: String,
    pub prediction: String,
}

/// Keeps the first non-empty line of a completion.
pub fn first_answer_line(completion: &str) -> String {
    completion.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_line() {
        assert_eq!(first_answer_line("\n  Mar, 1192\nQ: next"), "Mar, 1192");
        assert_eq!(first_answer_line(""), "");
    }
}
