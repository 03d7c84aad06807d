//! Run manifests: what was run, from which config, and what it produced.

use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::commands::Criterion;
use super::config::{Overrides, RunConfig};
use super::RunnerError;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Passed,
    Failed,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub path: String,
    pub kind: String,
    pub row_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub artifact_version: String,
    pub started: String,
    pub finished: Option<String>,
    pub seed: u64,
    pub overrides: Vec<String>,
    pub outputs: Vec<OutputRecord>,
    pub status: RunStatus,
    pub failed_criteria: Vec<String>,
    pub criteria: Vec<Criterion>,
    pub error: Option<String>,
}

fn stamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn begin(command: &str, config: &RunConfig, overrides: &Overrides, started: DateTime<Utc>) -> Self {
        RunManifest {
            command: command.into(),
            config_hash: config.config_hash(),
            artifact_version: ARTIFACT_VERSION.into(),
            started: stamp(started),
            finished: None,
            seed: config.experiment.master_seed,
            overrides: overrides.describe(),
            outputs: Vec::new(),
            status: RunStatus::Running,
            failed_criteria: Vec::new(),
            criteria: Vec::new(),
            error: None,
        }
    }

    /// Stamps the finish time and writes `manifest.json` into `dir`.
    pub fn finish(&mut self, dir: &Path) -> Result<(), RunnerError> {
        self.finished = Some(stamp(Utc::now()));
        let mut body = serde_json::to_vec_pretty(self).map_err(RunnerError::runtime)?;
        body.push(b'\n');
        write_atomic(&dir.join(MANIFEST_FILE), &body)
    }

    pub fn read(dir: &Path) -> Result<Self, RunnerError> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|source| RunnerError::Io { path: path.clone(), source })?;
        serde_json::from_str(&text).map_err(RunnerError::runtime)
    }
}

/// Writes through a temporary sibling and renames it into place, so readers
/// never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), RunnerError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|source| RunnerError::Io { path: tmp.clone(), source })?;
    std::fs::rename(&tmp, path).map_err(|source| RunnerError::Io { path: path.to_path_buf(), source })
}
