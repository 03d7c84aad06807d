//! Command surface: config loading, subcommands, artifacts and manifests.

mod commands;
pub mod config;
pub mod manifest;
mod table;

use std::path::PathBuf;

use thiserror::Error;

pub use commands::{run_command, Command, CommandOutcome, Criterion};
pub use config::{load_config, parse_config, Checks, FidiSettings, LdpSettings, LimitSettings, Overrides, RunConfig};
pub use manifest::{OutputRecord, RunManifest, RunStatus, ARTIFACT_VERSION};
pub use table::{OutputFormat, Table, SCHEMA_VERSION};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_CRITERION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("cannot parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunnerError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Parse { .. } | RunnerError::Validation(_) => EXIT_CONFIG,
            RunnerError::Runtime(_) | RunnerError::Io { .. } => EXIT_RUNTIME,
        }
    }

    pub(crate) fn runtime(e: impl std::fmt::Display) -> Self {
        RunnerError::Runtime(e.to_string())
    }
}

/// Runtime options that never enter the config hash.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub workers: usize,
    pub format: OutputFormat,
}

/// Loads the config, runs `command`, writes its tables and the manifest,
/// and returns the process exit code.
pub fn execute(
    command: Command,
    config_path: &std::path::Path,
    overrides: &Overrides,
    options: &RunOptions,
) -> Result<i32, RunnerError> {
    let config = load_config(config_path, overrides)?;
    execute_config(command, &config, overrides, options)
}

pub fn execute_config(
    command: Command,
    config: &RunConfig,
    overrides: &Overrides,
    options: &RunOptions,
) -> Result<i32, RunnerError> {
    let started = chrono::Utc::now();
    std::fs::create_dir_all(&options.out_dir)
        .map_err(|source| RunnerError::Io { path: options.out_dir.clone(), source })?;
    let pool =
        rayon::ThreadPoolBuilder::new().num_threads(options.workers.max(1)).build().map_err(RunnerError::runtime)?;
    let outcome = pool.install(|| run_command(command, config, options.workers.max(1)));
    let mut manifest = RunManifest::begin(command.name(), config, overrides, started);
    match outcome {
        Ok(outcome) => {
            for table in &outcome.tables {
                let record = table.write(&options.out_dir, options.format)?;
                manifest.outputs.push(record);
            }
            let failed: Vec<String> = outcome.criteria.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
            manifest.status = if failed.is_empty() { RunStatus::Passed } else { RunStatus::Failed };
            manifest.failed_criteria = failed;
            manifest.criteria = outcome.criteria;
            manifest.finish(&options.out_dir)?;
            Ok(if manifest.status == RunStatus::Passed { EXIT_PASS } else { EXIT_CRITERION })
        }
        Err(e) => {
            manifest.status = RunStatus::Error;
            manifest.error = Some(e.to_string());
            manifest.finish(&options.out_dir)?;
            Err(e)
        }
    }
}
