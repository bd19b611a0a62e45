//! Run manifests: what ran, on which inputs, and the hash of every output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cli::Command;
use crate::error::{CliError, Result};

pub const MANIFEST_NAME: &str = "run_manifest.json";

/// Output files that carry wall-clock measurements; never hashed.
pub const VOLATILE: &[&str] = &[MANIFEST_NAME, "timing.csv"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// The command with absolute paths.
    pub command: Command,
    /// Config as resolved after defaults, if the command takes one.
    pub config: Option<serde_json::Value>,
    pub seed: u64,
    /// Input path → SHA-256 (directories hash their files recursively).
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to `--out` → SHA-256, volatile files excluded.
    pub outputs: BTreeMap<String, String>,
    pub wall_seconds: f64,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn write(&self, out: &Path) -> Result<()> {
        let path = out.join(MANIFEST_NAME);
        fs::write(&path, serde_json::to_vec_pretty(self)?).map_err(|e| CliError::io(&path, e))
    }
}

fn files_under(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut pending = vec![root.to_path_buf()];
    while let Some(dir) = pending.pop() {
        for entry in fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))? {
            let path = entry.map_err(|e| CliError::io(&dir, e))?.path();
            if path.is_dir() {
                pending.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// SHA-256 of a file, or of a directory's (relative path, file hash) list.
pub fn hash_path(path: &Path) -> Result<String> {
    if !path.is_dir() {
        return hash_file(path);
    }
    let mut h = Sha256::new();
    for f in files_under(path)? {
        h.update(relative(path, &f).as_bytes());
        h.update([0]);
        h.update(hash_file(&f)?.as_bytes());
        h.update([b'\n']);
    }
    Ok(hex::encode(h.finalize()))
}

/// Hashes of every non-volatile file under `out`.
pub fn hash_outputs(out: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for f in files_under(out)? {
        let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if VOLATILE.contains(&name.as_str()) {
            continue;
        }
        map.insert(relative(out, &f), hash_file(&f)?);
    }
    Ok(map)
}

/// Human-readable differences between two output hash maps.
pub fn diff_outputs(expected: &BTreeMap<String, String>, actual: &BTreeMap<String, String>) -> Vec<String> {
    let mut diffs = Vec::new();
    for (k, v) in expected {
        match actual.get(k) {
            None => diffs.push(format!("missing {k}")),
            Some(a) if a != v => diffs.push(format!("changed {k}")),
            _ => {}
        }
    }
    for k in actual.keys().filter(|k| !expected.contains_key(*k)) {
        diffs.push(format!("extra {k}"));
    }
    diffs
}
