use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(path)?;
        Ok(Self {
            path: path.display().to_string(),
            sha256: format!("{:x}", Sha256::digest(&bytes)),
        })
    }
}

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started_at: String,
    pub finished_at: String,
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub struct ManifestBuilder {
    command: String,
    seed: Option<u64>,
    deterministic: bool,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    started_at: String,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            seed: None,
            deterministic: false,
            config: serde_json::Value::Null,
            inputs: Vec::new(),
            started_at: now(),
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn deterministic(mut self, on: bool) -> Self {
        self.deterministic = on;
        self
    }

    pub fn config(mut self, config: serde_json::Value) -> Self {
        self.config = config;
        self
    }

    pub fn input(mut self, path: impl Into<PathBuf>) -> Self {
        self.inputs.push(path.into());
        self
    }

    /// Hashes inputs and `outputs`, then writes the manifest to `path`.
    pub fn write(self, path: &Path, outputs: &[PathBuf]) -> std::io::Result<()> {
        let manifest = RunManifest {
            command: self.command,
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            deterministic: self.deterministic,
            config: self.config,
            inputs: self.inputs.iter().map(|p| FileDigest::of(p)).collect::<std::io::Result<_>>()?,
            outputs: outputs.iter().map(|p| FileDigest::of(p)).collect::<std::io::Result<_>>()?,
            started_at: self.started_at,
            finished_at: now(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text)
    }
}
