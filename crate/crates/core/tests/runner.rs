use std::path::{Path, PathBuf};
use std::process::Command as Process;

use stcurrent::runner::{
    execute, parse_config, Command, OutputFormat, Overrides, RunManifest, RunOptions, RunStatus, EXIT_CONFIG,
    EXIT_CRITERION, EXIT_PASS,
};

const SMALL: &str = r#"
[experiment]
n = 100
horizon = 1.0
half_width = 1.0
t_grid = [0.5, 1.0]
r_grid = [-0.5, 0.0]
seed = 11
replicas = 400

[kernel]
1 = 0.7
-1 = 0.3

[occupancy]
type = "poisson"
rho = 1.0

[checks]
batches = 20
normality_point = [2.0, 0.0]
"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(command: Command, text: &str, workers: usize, format: OutputFormat) -> (i32, PathBuf, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), text);
    let out = dir.path().join("out");
    let options = RunOptions { out_dir: out.clone(), workers, format };
    let code = execute(command, &cfg, &Overrides::default(), &options).unwrap_or_else(|e| e.exit_code());
    (code, out, dir)
}

fn payloads(out: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn payloads_are_identical_across_worker_counts() {
    for command in [Command::Simulate, Command::CovCheck] {
        let (c1, o1, _d1) = run(command, SMALL, 1, OutputFormat::Csv);
        let (c4, o4, _d4) = run(command, SMALL, 4, OutputFormat::Csv);
        assert_eq!(c1, c4);
        let (p1, p4) = (payloads(&o1), payloads(&o4));
        assert!(!p1.is_empty());
        assert_eq!(p1, p4, "{command:?}");
        let (m1, m4) = (RunManifest::read(&o1).unwrap(), RunManifest::read(&o4).unwrap());
        assert_eq!(m1.config_hash, m4.config_hash);
        assert_eq!(m1.outputs, m4.outputs);
    }
}

#[test]
fn manifest_records_outputs_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let options = RunOptions { out_dir: out.clone(), workers: 2, format: OutputFormat::Json };
    let overrides = Overrides { seed: Some(99), replicas: Some(50) };
    assert_eq!(execute(Command::Simulate, &cfg, &overrides, &options).unwrap(), EXIT_PASS);
    let m = RunManifest::read(&out).unwrap();
    assert_eq!(m.command, "simulate");
    assert_eq!(m.seed, 99);
    assert_eq!(m.overrides, vec!["experiment.seed=99", "experiment.replicas=50"]);
    assert_eq!(m.status, RunStatus::Passed);
    assert_eq!(m.outputs.len(), 1);
    assert_eq!(m.outputs[0].path, "fields.json");
    assert_eq!(m.outputs[0].row_count, 50 * 4);
    let doc: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("fields.json")).unwrap()).unwrap();
    assert_eq!(doc["schema_version"], 1);
    assert_eq!(doc["rows"].as_array().unwrap().len(), 200);
    let plain = parse_config(SMALL, &Overrides::default()).unwrap();
    assert_ne!(m.config_hash, plain.config_hash());
}

#[test]
fn zero_replicas_is_a_config_error() {
    let (code, _, _d) = run(Command::Simulate, &SMALL.replace("replicas = 400", "replicas = 0"), 1, OutputFormat::Csv);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn geometric_occupancy_is_rejected_by_ldp_commands() {
    let text = SMALL.replace("type = \"poisson\"", "type = \"geometric\"");
    for command in [Command::RateTable, Command::RateEmpirical] {
        let (code, out, _d) = run(command, &text, 1, OutputFormat::Csv);
        assert_eq!(code, EXIT_CONFIG);
        assert_eq!(RunManifest::read(&out).unwrap().status, RunStatus::Error);
    }
    let (code, _, _d) = run(Command::Simulate, &text, 1, OutputFormat::Csv);
    assert_eq!(code, EXIT_PASS);
}

#[test]
fn failing_criterion_sets_exit_code_and_keeps_artifacts() {
    let text = SMALL
        .replace("batches = 20", "batches = 20\nse_multiple = 0.0\nrelative_allowance = 0.0\nmean_ratio_max = 0.0");
    let (code, out, _d) = run(Command::CovCheck, &text, 2, OutputFormat::Csv);
    assert_eq!(code, EXIT_CRITERION);
    let m = RunManifest::read(&out).unwrap();
    assert_eq!(m.status, RunStatus::Failed);
    assert!(m.failed_criteria.contains(&"covariance".to_string()));
    assert!(out.join("covariance.csv").exists());
    assert!(out.join("means.csv").exists());
}

#[test]
fn rate_table_reports_spot_value_and_residual() {
    let text = r#"
[experiment]
n = 100
horizon = 6.283185307179586
half_width = 1.0
t_grid = [6.283185307179586]
r_grid = [0.0]
replicas = 1

[kernel]
1 = 0.5
-1 = 0.5

[occupancy]
type = "poisson"
rho = 1.0

[ldp]
x_values = [2.3504023872876028]
"#;
    let (code, out, _d) = run(Command::RateTable, text, 1, OutputFormat::Csv);
    assert_eq!(code, EXIT_PASS);
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(out.join("rate_table.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert_eq!(headers.iter().collect::<Vec<_>>(), ["x", "I", "I1", "I2", "alpha", "residual"]);
    let row = reader.records().next().unwrap().unwrap();
    let rate: f64 = row[1].parse().unwrap();
    let residual: f64 = row[5].parse().unwrap();
    assert!((rate - 1.2642411).abs() < 1e-6, "{rate}");
    assert!(residual < 1e-6);
}

#[test]
fn fidi_requires_a_fidi_table() {
    let (code, _, _d) = run(Command::Fidi, SMALL, 1, OutputFormat::Csv);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn binary_maps_errors_to_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_stcurrent");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let missing = Process::new(exe)
        .args(["simulate", "--config", "/nonexistent.toml"])
        .env("STCURRENT_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(EXIT_CONFIG));

    let cfg = write_config(dir.path(), &SMALL.replace("n = 100", "n = = 100"));
    let bad = Process::new(exe).args(["simulate", "--config"]).arg(&cfg).env("STCURRENT_OUT", &out).output().unwrap();
    assert_eq!(bad.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("line"));

    let cfg = write_config(dir.path(), SMALL);
    let ok = Process::new(exe)
        .args(["simulate", "--replicas", "10", "--workers", "2", "--config"])
        .arg(&cfg)
        .env("STCURRENT_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(EXIT_PASS), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(out.join("fields.csv").exists());
    assert_eq!(RunManifest::read(&out).unwrap().outputs[0].row_count, 40);
}
