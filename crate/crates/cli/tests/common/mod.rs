//! Shared helpers for the CLI tests: a small synthetic fixture and a
//! cassette of known answers.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempalign::corpus::{QueryRecord, SplitName};
use tempalign::llmgate::{Cassette, CompletionRequest, TOP_P_SWEEP};
use tempalign::promptkit::AssembledPrompt;

pub const MODEL: &str = "test-model";

pub fn tempalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tempalign")).args(args).output().expect("binary runs")
}

/// Runs and asserts success.
pub fn ok(args: &[&str]) -> Output {
    let out = tempalign(args);
    assert!(
        out.status.success(),
        "tempalign {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// `synth` output under `<dir>/fx`.
pub struct Fixture {
    pub dir: PathBuf,
}

impl Fixture {
    pub fn new(dir: &Path, dim: usize, items: usize, train_items: usize) -> Self {
        let fx = dir.join("fx");
        ok(&[
            "synth",
            "--out-dir",
            s(&fx),
            "--dim",
            &dim.to_string(),
            "--items",
            &items.to_string(),
            "--train-items",
            &train_items.to_string(),
            "--seed",
            "3",
        ]);
        Self { dir: fx }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Retrieval flags for held-out queries against the full rich pool.
    pub fn retrieval_args(&self) -> Vec<String> {
        [
            ("--queries", "low_test.jsonl"),
            ("--low-store", "low.clts"),
            ("--rich-corpus", "rich.jsonl"),
            ("--rich-store", "rich.clts"),
            ("--translated-store", "translated.clts"),
            ("--id-map", "id_map.json"),
        ]
        .into_iter()
        .flat_map(|(flag, file)| [flag.to_string(), self.path(file).display().to_string()])
        .collect()
    }

    pub fn queries(&self) -> Vec<QueryRecord> {
        let text = fs::read_to_string(self.path("low_test.jsonl")).unwrap();
        tempalign::corpus::parse_corpus(text.as_bytes(), "ro", tempalign::corpus::TaskLevel::L1, SplitName::Test)
            .unwrap()
            .records
    }
}

/// Answer for query `i` under sweep position `j`: mostly gold, sometimes wrong,
/// with trailing junk that the first-line rule must drop.
pub fn scripted_answer(record: &QueryRecord, i: usize, j: usize) -> String {
    if (i + j) % 3 == 0 {
        "nimic\nQ: ignored".to_string()
    } else {
        format!("{}\nQ: ignored", record.answers[0])
    }
}

/// Adds scripted answers for every prompt in `prompts_jsonl` at every default top_p.
pub fn add_to_cassette(cassette_path: &Path, prompts_jsonl: &Path, queries: &[QueryRecord]) {
    let mut cassette = if cassette_path.is_file() { Cassette::load(cassette_path).unwrap() } else { Cassette::new() };
    let by_id: BTreeMap<&str, (usize, &QueryRecord)> =
        queries.iter().enumerate().map(|(i, q)| (q.id.as_str(), (i, q))).collect();
    for line in fs::read_to_string(prompts_jsonl).unwrap().lines() {
        let p: AssembledPrompt = serde_json::from_str(line).unwrap();
        let (i, q) = by_id[p.query_id.as_str()];
        for (j, top_p) in TOP_P_SWEEP.into_iter().enumerate() {
            let req = CompletionRequest::new(MODEL, p.text.clone(), top_p);
            cassette.insert(req, scripted_answer(q, i, j)).unwrap();
        }
    }
    cassette.save(cassette_path).unwrap();
}

/// Every file under `dir`, relative path to bytes.
pub fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
