//! Per-stage manifests: input and output checksums plus parameters.
//!
//! A manifest holds no timestamps, so re-running a stage on the same inputs
//! rewrites it byte for byte. Output paths are stored relative to the
//! manifest's directory so a result tree can be moved as a whole.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::data_error;

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub version: String,
    pub seed: Option<u64>,
    pub params: serde_json::Value,
    pub inputs: BTreeMap<String, FileDigest>,
    pub outputs: BTreeMap<String, FileDigest>,
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `<output>.manifest.json`.
pub fn manifest_path_for(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(MANIFEST_SUFFIX);
    PathBuf::from(s)
}

fn absolute(path: &Path) -> PathBuf {
    fs::canonicalize(path).unwrap_or_else(|_| std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf()))
}

impl Manifest {
    pub fn new(stage: &str, seed: Option<u64>, params: serde_json::Value) -> Self {
        Self {
            stage: stage.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            params,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) -> anyhow::Result<()> {
        let digest = FileDigest { path: path.display().to_string(), sha256: sha256_file(path)? };
        self.inputs.insert(name.to_string(), digest);
        Ok(())
    }

    /// Records an output; call after the file is written.
    pub fn output(&mut self, name: &str, path: &Path, manifest_dir: &Path) -> anyhow::Result<()> {
        let abs = absolute(path);
        let rel = abs
            .strip_prefix(absolute(manifest_dir))
            .map(|p| p.to_string_lossy().replace('\\', "/"))
            .unwrap_or_else(|_| abs.display().to_string());
        self.outputs.insert(name.to_string(), FileDigest { path: rel, sha256: sha256_file(path)? });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
    }
}

/// Manifests in the input's directory and its parent that list it as an output.
fn producers(input: &Path) -> Vec<(PathBuf, FileDigest)> {
    let target = absolute(input);
    let mut dirs = Vec::new();
    if let Some(dir) = target.parent() {
        dirs.push(dir.to_path_buf());
        if let Some(up) = dir.parent() {
            dirs.push(up.to_path_buf());
        }
    }
    let mut found = Vec::new();
    for dir in dirs {
        let Ok(entries) = fs::read_dir(&dir) else { continue };
        let mut names: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.to_string_lossy().ends_with(MANIFEST_SUFFIX))
            .collect();
        names.sort();
        for m in names {
            let Ok(manifest) = Manifest::read(&m) else { continue };
            for digest in manifest.outputs.values() {
                let candidate = absolute(&dir.join(&digest.path));
                if candidate == target {
                    found.push((m.clone(), digest.clone()));
                }
            }
        }
    }
    found
}

/// Strict mode: every input produced by an earlier stage must still match the
/// checksum its producer recorded.
pub fn verify_inputs(manifest: &Manifest) -> anyhow::Result<usize> {
    let mut checked = 0;
    for (name, digest) in &manifest.inputs {
        for (producer, recorded) in producers(Path::new(&digest.path)) {
            if recorded.sha256 != digest.sha256 {
                return Err(data_error(format!(
                    "manifest checksum mismatch for input `{name}` ({}): {} records {}, file has {}",
                    digest.path,
                    producer.display(),
                    recorded.sha256,
                    digest.sha256
                )));
            }
            checked += 1;
        }
    }
    Ok(checked)
}
