use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::failure::Failure;

pub const FILE_NAME: &str = "manifest.json";

/// Written next to every output. `resolved_config` is the complete input
/// after flag overrides, so feeding the manifest back to the same subcommand
/// repeats the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub resolved_config: Value,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<PathBuf>,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn new(subcommand: &str, resolved_config: &impl Serialize, started_at: String) -> Result<Self, Failure> {
        Ok(Self {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: None,
            threads: None,
            resolved_config: serde_json::to_value(resolved_config).map_err(Failure::config)?,
            started_at,
            finished_at: String::new(),
            outputs: Vec::new(),
        })
    }

    pub fn write(mut self, dir: &Path) -> Result<PathBuf, Failure> {
        self.finished_at = now();
        let path = dir.join(FILE_NAME);
        write_json(&path, &self)?;
        Ok(path)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).map_err(Failure::data)?;
    std::fs::write(path, text + "\n")
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::data)
}

pub fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::data)
}

/// Reads a JSON config, or the `resolved_config` of a manifest written by
/// `subcommand`.
pub fn load_config<T: DeserializeOwned>(path: &Path, subcommand: &str) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::config)?;
    let value: Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::config)?;
    let is_manifest = value.get("resolved_config").is_some() && value.get("subcommand").is_some();
    if !is_manifest {
        return serde_json::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))
            .map_err(Failure::config);
    }
    let manifest: RunManifest = serde_json::from_value(value)
        .with_context(|| format!("parsing manifest {}", path.display()))
        .map_err(Failure::config)?;
    if manifest.subcommand != subcommand {
        return Err(Failure::config(anyhow::anyhow!(
            "{} is a manifest for `{}`, not `{subcommand}`",
            path.display(),
            manifest.subcommand
        )));
    }
    serde_json::from_value(manifest.resolved_config)
        .with_context(|| format!("parsing resolved_config of {}", path.display()))
        .map_err(Failure::config)
}
