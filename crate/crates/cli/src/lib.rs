//! The `holorec` command-line tool.
//!
//! Every command writes its artifacts under `--out` together with a
//! [`manifest::RunManifest`]; `holorec replay` re-runs a manifest into a
//! fresh directory and checks that every output hash matches.

pub mod cli;
pub mod commands;
pub mod error;
pub mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde_json::Value;

use crate::cli::{Command, ReplayArgs};
use crate::commands::{absolute, execute};
use crate::error::{CliError, Result};
use crate::manifest::{diff_outputs, hash_outputs, hash_path, RunManifest};

/// Run a parsed command, recording a manifest.
pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Replay(args) => replay(&args),
        cmd => record(cmd, None).map(|_| ()),
    }
}

fn record(mut cmd: Command, replay_config: Option<&Value>) -> Result<RunManifest> {
    for p in cmd.inputs_mut() {
        *p = absolute(p)?;
    }
    let common = cmd.common_mut().expect("not replay");
    common.out = absolute(&common.out)?;
    let (out, seed) = (common.out.clone(), common.seed);

    let mut inputs = BTreeMap::new();
    for p in cmd.inputs_mut() {
        if !p.exists() {
            return Err(CliError::input(format!("{} does not exist", p.display())));
        }
        if out.starts_with(&*p) || p.starts_with(&out) {
            return Err(CliError::input(format!("output {} overlaps input {}", out.display(), p.display())));
        }
        inputs.insert(p.display().to_string(), hash_path(p)?);
    }
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;

    let start = Instant::now();
    let config = execute(&cmd, replay_config)?;
    let manifest = RunManifest {
        tool: "holorec".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cmd,
        config,
        seed,
        inputs,
        outputs: hash_outputs(&out)?,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    manifest.write(&out)?;
    Ok(manifest)
}

fn is_empty_dir(p: &Path) -> bool {
    fs::read_dir(p).map(|mut d| d.next().is_none()).unwrap_or(false)
}

fn replay(args: &ReplayArgs) -> Result<()> {
    let recorded = RunManifest::read(&args.manifest)?;
    if args.out.exists() && !is_empty_dir(&args.out) {
        return Err(CliError::input(format!("replay output {} must be empty or absent", args.out.display())));
    }
    for (path, hash) in &recorded.inputs {
        let now = hash_path(Path::new(path))?;
        if &now != hash {
            return Err(CliError::input(format!("input {path} changed since the recorded run")));
        }
    }
    let mut cmd = recorded.command.clone();
    let common = cmd.common_mut().ok_or_else(|| CliError::input("manifest records a replay"))?;
    common.out = args.out.clone();
    let fresh = record(cmd, recorded.config.as_ref())?;
    let diffs = diff_outputs(&recorded.outputs, &fresh.outputs);
    if diffs.is_empty() {
        println!("replayed {}: {} outputs hash-identical", recorded.command.name(), fresh.outputs.len());
        Ok(())
    } else {
        Err(CliError::Numerical(format!("replay differs: {}", diffs.join(", "))))
    }
}
