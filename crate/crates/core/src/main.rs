use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use stcurrent::runner::{execute, Command, OutputFormat, Overrides, RunOptions};

/// Simulates space-time currents of independent random walks and checks them
/// against their Gaussian and large-deviation limits.
#[derive(Debug, Parser)]
#[command(name = "stcurrent", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = default_workers())]
    workers: usize,
    #[arg(long, env = "STCURRENT_OUT", default_value = "out")]
    out: PathBuf,
    /// Overrides `experiment.replicas`.
    #[arg(long)]
    replicas: Option<u64>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    format: OutputFormat,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides { seed: cli.seed, replicas: cli.replicas };
    let options = RunOptions { out_dir: cli.out, workers: cli.workers, format: cli.format };
    let code = match execute(cli.command, &cli.config, &overrides, &options) {
        Ok(code) => {
            if let Ok(m) = stcurrent::runner::RunManifest::read(&options.out_dir) {
                for c in &m.criteria {
                    println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                }
            }
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}
