//! Run manifests: the resolved config plus provenance, written once per run.

use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};

use crate::config::{RunConfig, RunInfo};
use crate::{CliError, VERSION};

pub const MANIFEST_FILE: &str = "manifest.toml";

fn stamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Writes `<out_dir>/manifest.toml`.
pub fn write(config: &RunConfig, command: &str, out_dir: &Path, started: DateTime<Utc>) -> Result<(), CliError> {
    let mut snapshot = config.clone();
    snapshot.run = Some(RunInfo {
        command: command.to_string(),
        seed: config.seed,
        version: VERSION.to_string(),
        out_dir: out_dir.to_path_buf(),
        started: stamp(started),
        finished: stamp(Utc::now()),
    });
    let text = format!(
        "# Resolved configuration of a {command} run. Replay with\n# `slice-infomin replay <this file>`.\n{}",
        snapshot.to_toml()
    );
    let path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&path, text).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

/// Reads a manifest back, returning the config and the recorded command.
pub fn read(path: &Path) -> Result<(RunConfig, String), CliError> {
    let mut config = RunConfig::load(path)?;
    let run = config
        .run
        .take()
        .ok_or_else(|| CliError::usage(format!("{} has no [run] table", path.display())))?;
    Ok((config, run.command))
}
