use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use cylwell_core::cylinder::Verdict;

use crate::config::RunConfig;

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub artifact: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    pub wall_clock_seconds: f64,
    pub all_pass: bool,
    pub verdicts: BTreeMap<String, Verdict>,
    pub files: Vec<FileEntry>,
    /// Set when the run aborted.
    pub error: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes every file into `dir` and returns their inventory in name order.
pub fn write_files(dir: &Path, files: &BTreeMap<String, Vec<u8>>) -> Result<Vec<FileEntry>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    files
        .iter()
        .map(|(name, content)| {
            let path = dir.join(name);
            std::fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
            Ok(FileEntry {
                path: name.clone(),
                sha256: sha256_hex(content),
                bytes: content.len(),
            })
        })
        .collect()
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    std::fs::write(dir.join("manifest.json"), text).context("writing manifest.json")
}
