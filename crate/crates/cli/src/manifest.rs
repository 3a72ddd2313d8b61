use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::CliError;

/// Reproducibility record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<PathBuf>,
    pub params: serde_json::Value,
    pub seed: u64,
    /// Whether the seed came from `--seed` rather than being drawn.
    pub seed_given: bool,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub dry_run: bool,
    pub outputs: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, seed_given: bool, dry_run: bool) -> Self {
        RunManifest {
            command: command.to_string(),
            inputs: Vec::new(),
            params: serde_json::Value::Null,
            seed,
            seed_given,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            dry_run,
            outputs: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn path_in(out: &Path, command: &str) -> PathBuf {
        out.join(format!("{command}.manifest.json"))
    }

    pub fn write(&self, out: &Path) -> Result<PathBuf, CliError> {
        let path = Self::path_in(out, &self.command);
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(&path, text + "\n").map_err(|source| CliError::Output {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}
