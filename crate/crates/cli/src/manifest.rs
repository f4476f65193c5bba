use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

/// What was run, with which fully resolved options, and what it wrote.
/// Passing the file back through `--config` repeats the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub code_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn new(command: &str, config: BTreeMap<String, String>, seed: u64, started_unix: u64) -> Self {
        Self {
            command: command.to_string(),
            config,
            seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix,
            finished_unix: started_unix,
            outputs: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest fields always serialise")
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Usage(format!("bad manifest: {e}")))
    }

    pub fn write(mut self, dir: &Path, outputs: &[PathBuf]) -> Result<PathBuf, CliError> {
        self.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
        self.finished_unix = unix_now();
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_json() + "\n")?;
        Ok(path)
    }
}
