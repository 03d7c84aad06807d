//! Experiment configuration files.
//!
//! A config is a TOML document with an `[experiment]` table, a `[kernel]`
//! table mapping jump offsets to weights, an `[occupancy]` table, and
//! optional `[checks]`, `[ldp]`, `[fidi]` and `[limit]` tables. Missing
//! optional keys take documented defaults; the fully resolved config is what
//! gets hashed.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunnerError;
use crate::current::ExperimentConfig;
use crate::kernel::validate_kernel;
use crate::occupancy::{OccupancyKind, OccupancyModel};

pub const DEFAULT_WINDOW_TOL: f64 = 1e-6;
pub const DEFAULT_QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: RawExperiment,
    kernel: BTreeMap<String, f64>,
    occupancy: OccupancyKind,
    #[serde(default)]
    checks: Checks,
    #[serde(default)]
    ldp: RawLdp,
    fidi: Option<FidiSettings>,
    #[serde(default)]
    limit: LimitSettings,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    n: u64,
    horizon: f64,
    half_width: f64,
    t_grid: Vec<f64>,
    r_grid: Vec<f64>,
    #[serde(default = "default_window_tol")]
    window_tol: f64,
    #[serde(default)]
    seed: u64,
    replicas: u64,
}

fn default_window_tol() -> f64 {
    DEFAULT_WINDOW_TOL
}

/// Pass/fail thresholds of the verification commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Checks {
    /// Covariance rows pass within `max(se_multiple·SE, relative_allowance·|analytic|)`.
    pub se_multiple: f64,
    pub relative_allowance: f64,
    /// Largest accepted `|mean| / SE`.
    pub mean_ratio_max: f64,
    /// Restricts the covariance comparison to these `(t, r)` points.
    pub points: Option<Vec<(f64, f64)>>,
    pub batches: usize,
    pub raw_cap: usize,
    /// Point for the normality diagnostics, skipped when absent from the grid.
    pub normality_point: Option<(f64, f64)>,
    pub skewness_max: f64,
    pub excess_kurtosis_max: f64,
    pub ks_p_min: f64,
    pub slope_min: f64,
    pub slope_max: f64,
    pub duality_tol: f64,
    pub identity_tol: f64,
    pub oracle_se_multiple: f64,
}

impl Default for Checks {
    fn default() -> Self {
        Checks {
            se_multiple: 4.0,
            relative_allowance: 0.10,
            mean_ratio_max: 3.0,
            points: None,
            batches: crate::stats::DEFAULT_BATCHES,
            raw_cap: crate::stats::DEFAULT_RAW_CAP,
            normality_point: Some((1.0, 0.0)),
            skewness_max: 0.1,
            excess_kurtosis_max: 0.2,
            ks_p_min: 0.01,
            slope_min: 0.45,
            slope_max: 0.55,
            duality_tol: 1e-6,
            identity_tol: 1e-8,
            oracle_se_multiple: 3.0,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLdp {
    t: Option<f64>,
    quad_tol: Option<f64>,
    x_values: Option<Vec<f64>>,
    x: Option<f64>,
    samples: Option<u64>,
    n_values: Option<Vec<u64>>,
}

/// Settings of the large-deviation commands, resolved.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LdpSettings {
    pub t: f64,
    pub quad_tol: f64,
    pub x_values: Vec<f64>,
    pub x: f64,
    pub samples: u64,
    /// When non-empty, the empirical-rate command runs at each `n` and checks
    /// that the gap to the limiting rate shrinks.
    pub n_values: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FidiSettings {
    pub times: Vec<f64>,
    /// Each entry has one coordinate per time.
    pub x_values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitSettings {
    /// `(σ², x)` pairs for the Ψ table.
    pub psi_pairs: Vec<(f64, f64)>,
    /// Monte Carlo draws per pair for the Ψ oracle; 0 skips it.
    pub psi_draws: u64,
}

impl Default for LimitSettings {
    fn default() -> Self {
        let mut psi_pairs = Vec::new();
        for &s2 in &[0.5, 1.0, 2.0] {
            for &x in &[-1.0, 0.0, 1.0] {
                psi_pairs.push((s2, x));
            }
        }
        LimitSettings { psi_pairs, psi_draws: 100_000 }
    }
}

/// A validated, fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub checks: Checks,
    pub ldp: LdpSettings,
    pub fidi: Option<FidiSettings>,
    pub limit: LimitSettings,
}

/// Command-line overrides applied after parsing and before validation.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicas: Option<u64>,
}

impl Overrides {
    pub fn describe(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(s) = self.seed {
            out.push(format!("experiment.seed={s}"));
        }
        if let Some(r) = self.replicas {
            out.push(format!("experiment.replicas={r}"));
        }
        out
    }
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig, RunnerError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| RunnerError::Parse { path: path.display().to_string(), message: e.to_string() })?;
    parse_config(&text, overrides).map_err(|e| match e {
        RunnerError::Parse { message, .. } => RunnerError::Parse { path: path.display().to_string(), message },
        other => other,
    })
}

pub fn parse_config(text: &str, overrides: &Overrides) -> Result<RunConfig, RunnerError> {
    let raw: RawConfig =
        toml::from_str(text).map_err(|e| RunnerError::Parse { path: "<input>".into(), message: e.to_string() })?;
    resolve(raw, overrides)
}

fn resolve(raw: RawConfig, overrides: &Overrides) -> Result<RunConfig, RunnerError> {
    let mut weights = BTreeMap::new();
    for (key, &w) in &raw.kernel {
        let offset: i64 = key
            .trim()
            .parse()
            .map_err(|_| RunnerError::Validation(format!("kernel offset {key:?} is not an integer")))?;
        if weights.insert(offset, w).is_some() {
            return Err(RunnerError::Validation(format!("kernel offset {offset} listed more than once")));
        }
    }
    let kernel = validate_kernel(&weights).map_err(|e| RunnerError::Validation(format!("kernel: {e}")))?;
    let occupancy =
        OccupancyModel::from_kind(&raw.occupancy).map_err(|e| RunnerError::Validation(format!("occupancy: {e}")))?;
    let e = raw.experiment;
    let experiment = ExperimentConfig {
        n: e.n,
        horizon: e.horizon,
        half_width: e.half_width,
        t_grid: e.t_grid,
        r_grid: e.r_grid,
        kernel,
        occupancy,
        window_tol: e.window_tol,
        master_seed: overrides.seed.unwrap_or(e.seed),
        replicas: overrides.replicas.unwrap_or(e.replicas),
    };
    experiment.validate().map_err(|e| RunnerError::Validation(format!("experiment: {e}")))?;

    let default_t = experiment.t_grid.iter().copied().find(|&t| t > 0.0).unwrap_or(1.0);
    let ldp = LdpSettings {
        t: raw.ldp.t.unwrap_or(default_t),
        quad_tol: raw.ldp.quad_tol.unwrap_or(DEFAULT_QUAD_TOL),
        x_values: raw.ldp.x_values.unwrap_or_else(|| (-12..=12).map(|k| k as f64 * 0.25).collect()),
        x: raw.ldp.x.unwrap_or(1.0),
        samples: raw.ldp.samples.unwrap_or(100_000),
        n_values: raw.ldp.n_values.unwrap_or_default(),
    };
    if !(ldp.t > 0.0 && ldp.t.is_finite()) {
        return Err(RunnerError::Validation(format!("ldp.t must be positive, got {}", ldp.t)));
    }
    if !(ldp.quad_tol > 0.0 && ldp.quad_tol.is_finite()) {
        return Err(RunnerError::Validation(format!("ldp.quad_tol must be positive, got {}", ldp.quad_tol)));
    }
    if ldp.samples == 0 {
        return Err(RunnerError::Validation("ldp.samples must be positive".into()));
    }
    let checks = raw.checks;
    if checks.batches == 0 {
        return Err(RunnerError::Validation("checks.batches must be positive".into()));
    }
    if let Some(f) = &raw.fidi {
        if f.x_values.iter().any(|x| x.len() != f.times.len()) {
            return Err(RunnerError::Validation("fidi.x_values entries need one coordinate per time".into()));
        }
    }
    Ok(RunConfig { experiment, checks, ldp, fidi: raw.fidi, limit: raw.limit })
}

impl RunConfig {
    /// SHA-256 of the canonical JSON form of the resolved config. Object keys
    /// are emitted in sorted order, so key order in the source file and
    /// spelled-out defaults do not affect it.
    pub fn config_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Rejects occupations whose log-mgf is not finite everywhere, which the
    /// large-deviation commands require.
    pub fn require_entire_mgf(&self) -> Result<(), RunnerError> {
        let occ = &self.experiment.occupancy;
        if occ.has_entire_mgf() {
            Ok(())
        } else {
            Err(RunnerError::Validation(format!(
                "occupancy {:?} violates the LDP requirement that γ(θ) = log E e^{{θη}} be finite for all real θ \
                 (finite only for θ < {})",
                occ.kind(),
                occ.mgf_radius()
            )))
        }
    }

    pub fn require_poisson(&self) -> Result<f64, RunnerError> {
        match self.experiment.occupancy.kind() {
            OccupancyKind::Poisson { rho } => Ok(*rho),
            other => Err(RunnerError::Validation(format!("this command needs Poisson occupations, got {other:?}"))),
        }
    }
}
