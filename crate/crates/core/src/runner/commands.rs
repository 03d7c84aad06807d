use clap::ValueEnum;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::table::{num, Table};
use super::RunnerError;
use crate::current::{exact_current_pmf, replica_seed, CurrentField, ExperimentConfig, PreparedExperiment};
use crate::ldp::{fidi_rate, poisson_rate_closed, rate_table, tilted_tail_estimate, FidiSpec, RateModel};
use crate::limit::{fbm_cov, gamma0, gamma0_integral, gammaq, gammaq_integral, limit_cov, LimitCovariance};
use crate::special::psi;
use crate::stats::{
    covariance_report, grid_points, mean_report, normality_diagnostics, run_batched, scaling_exponent,
    scaling_exponent_of,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Simulate,
    CovCheck,
    FbmCheck,
    RateTable,
    RateEmpirical,
    Fidi,
    LimitTables,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::CovCheck => "cov-check",
            Command::FbmCheck => "fbm-check",
            Command::RateTable => "rate-table",
            Command::RateEmpirical => "rate-empirical",
            Command::Fidi => "fidi",
            Command::LimitTables => "limit-tables",
        }
    }
}

/// A named pass/fail check with the measured value and its bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Criterion {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Criterion { name: name.into(), passed, detail }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CommandOutcome {
    pub tables: Vec<Table>,
    pub criteria: Vec<Criterion>,
}

impl CommandOutcome {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }
}

/// Runs one subcommand inside the caller's thread pool. Nothing here writes
/// to disk.
pub fn run_command(command: Command, config: &RunConfig, workers: usize) -> Result<CommandOutcome, RunnerError> {
    match command {
        Command::Simulate => simulate(config),
        Command::CovCheck => cov_check(config, workers),
        Command::FbmCheck => fbm_check(config, workers),
        Command::RateTable => rate_table_cmd(config),
        Command::RateEmpirical => rate_empirical(config),
        Command::Fidi => fidi(config),
        Command::LimitTables => limit_tables(config),
    }
}

fn limit_params(cfg: &ExperimentConfig) -> Result<LimitCovariance, RunnerError> {
    LimitCovariance::new(cfg.occupancy.rho0(), cfg.occupancy.v0(), cfg.kernel.kappa2())
        .map_err(|e| RunnerError::Validation(e.to_string()))
}

fn point_index(points: &[(f64, f64)], p: (f64, f64)) -> Option<usize> {
    points.iter().position(|&q| q == p)
}

fn simulate(config: &RunConfig) -> Result<CommandOutcome, RunnerError> {
    let cfg = &config.experiment;
    let prepared = PreparedExperiment::new(cfg).map_err(RunnerError::runtime)?;
    let fields: Vec<CurrentField> = (0..cfg.replicas)
        .into_par_iter()
        .map(|i| prepared.simulate(i))
        .collect::<Result<_, _>>()
        .map_err(RunnerError::runtime)?;
    let mut table = Table::new("fields", "current_fields", &["replica", "t", "r", "Y", "Y_scaled"]);
    let points = grid_points(&cfg.t_grid, &cfg.r_grid);
    for f in &fields {
        for (i, &(t, r)) in points.iter().enumerate() {
            table.push(vec![f.replica_index.to_string(), num(t), num(r), f.values[i].to_string(), num(f.scaled[i])]);
        }
    }
    Ok(CommandOutcome { tables: vec![table], criteria: Vec::new() })
}

fn cov_check(config: &RunConfig, workers: usize) -> Result<CommandOutcome, RunnerError> {
    let cfg = &config.experiment;
    let checks = &config.checks;
    let params = limit_params(cfg)?;
    let points = grid_points(&cfg.t_grid, &cfg.r_grid);
    let prepared = PreparedExperiment::new(cfg).map_err(RunnerError::runtime)?;
    let ens = run_batched(&prepared, workers, checks.batches, checks.raw_cap).map_err(RunnerError::runtime)?;
    let mut report = covariance_report(&ens, &points, &params).map_err(RunnerError::runtime)?;
    if let Some(subset) = &checks.points {
        if let Some(p) = subset.iter().find(|p| point_index(&points, **p).is_none()) {
            return Err(RunnerError::Validation(format!("checks.points entry {p:?} is not a grid point")));
        }
        report = report.restrict(subset);
    }
    let mut outcome = CommandOutcome::default();

    let mut cov = Table::new(
        "covariance",
        "covariance_report",
        &["t_a", "r_a", "t_b", "r_b", "empirical", "analytic", "jackknife_se", "z", "within"],
    );
    let mut misses = 0;
    for row in &report.rows {
        let ok = row.within(checks.se_multiple, checks.relative_allowance);
        misses += usize::from(!ok);
        cov.push(vec![
            num(row.point_a.0),
            num(row.point_a.1),
            num(row.point_b.0),
            num(row.point_b.1),
            num(row.empirical_cov),
            num(row.analytic_cov),
            num(row.std_error),
            num(row.z_score),
            ok.to_string(),
        ]);
    }
    outcome.criteria.push(Criterion::new(
        "covariance",
        misses == 0,
        format!(
            "{misses} of {} entries outside max({}·SE, {}·|analytic|); max |z| = {:.3}",
            report.rows.len(),
            checks.se_multiple,
            checks.relative_allowance,
            report.max_abs_z
        ),
    ));
    outcome.tables.push(cov);

    let means = mean_report(&ens.total, &points).map_err(RunnerError::runtime)?;
    let mut mean_table = Table::new("means", "mean_report", &["t", "r", "mean", "std_error", "ratio"]);
    for row in &means.rows {
        mean_table.push(vec![num(row.point.0), num(row.point.1), num(row.mean), num(row.std_error), num(row.ratio)]);
    }
    outcome.criteria.push(Criterion::new(
        "mean",
        means.max_ratio <= checks.mean_ratio_max,
        format!("max |mean|/SE = {:.3} (bound {})", means.max_ratio, checks.mean_ratio_max),
    ));
    outcome.tables.push(mean_table);

    if let Some(p) = checks.normality_point {
        if let Some(i) = point_index(&points, p) {
            let variance = limit_cov(&params, p, p);
            let norm = normality_diagnostics(ens.total.raw(i), variance, Some(cfg.current_scale()))
                .map_err(RunnerError::runtime)?;
            let mut t = Table::new(
                "normality",
                "normality_report",
                &["t", "r", "samples", "analytic_variance", "skewness", "excess_kurtosis", "ks_statistic", "ks_p"],
            );
            t.push(vec![
                num(p.0),
                num(p.1),
                norm.samples.to_string(),
                num(variance),
                num(norm.skewness),
                num(norm.excess_kurtosis),
                num(norm.ks_statistic),
                num(norm.ks_p),
            ]);
            let ok = norm.skewness.abs() <= checks.skewness_max
                && norm.excess_kurtosis.abs() <= checks.excess_kurtosis_max
                && norm.ks_p > checks.ks_p_min;
            outcome.criteria.push(Criterion::new(
                "normality",
                ok,
                format!(
                    "skew {:.4} (≤ {}), excess kurtosis {:.4} (≤ {}), KS p {:.4} (> {})",
                    norm.skewness,
                    checks.skewness_max,
                    norm.excess_kurtosis,
                    checks.excess_kurtosis_max,
                    norm.ks_p,
                    checks.ks_p_min
                ),
            ));
            outcome.tables.push(t);
        }
    }
    Ok(outcome)
}

fn fbm_check(config: &RunConfig, workers: usize) -> Result<CommandOutcome, RunnerError> {
    let cfg = &config.experiment;
    let checks = &config.checks;
    let params = limit_params(cfg)?;
    let points = grid_points(&cfg.t_grid, &cfg.r_grid);
    let (indices, times): (Vec<usize>, Vec<f64>) =
        points.iter().enumerate().filter(|(_, p)| p.1 == 0.0 && p.0 > 0.0).map(|(i, p)| (i, p.0)).unzip();
    if times.is_empty() {
        return Err(RunnerError::Validation("fbm-check needs r = 0 in r_grid and positive times".into()));
    }
    let prepared = PreparedExperiment::new(cfg).map_err(RunnerError::runtime)?;
    let ens = run_batched(&prepared, workers, checks.batches, checks.raw_cap).map_err(RunnerError::runtime)?;
    let fit = scaling_exponent(&ens.total, &indices, &times).map_err(RunnerError::runtime)?;
    let rho = cfg.occupancy.rho0();
    let analytic: Vec<f64> = times.iter().map(|&t| fbm_cov(t, t, rho, cfg.kernel.kappa2())).collect();
    let analytic_fit = scaling_exponent_of(&times, &analytic).map_err(RunnerError::runtime)?;

    let mut t =
        Table::new("fbm_variance", "fbm_scaling", &["t", "empirical_variance", "analytic_variance", "limit_variance"]);
    for (k, &i) in indices.iter().enumerate() {
        let p = points[i];
        t.push(vec![num(times[k]), num(ens.total.covariance(i, i)), num(analytic[k]), num(limit_cov(&params, p, p))]);
    }
    let mut f = Table::new("fbm_fit", "fbm_fit", &["route", "slope", "std_error"]);
    f.push(vec!["empirical".into(), num(fit.slope), num(fit.std_error)]);
    f.push(vec!["analytic".into(), num(analytic_fit.slope), num(analytic_fit.std_error)]);
    let criteria = vec![
        Criterion::new(
            "fbm_slope",
            fit.slope >= checks.slope_min && fit.slope <= checks.slope_max,
            format!(
                "slope {:.4} ± {:.4}, accepted [{}, {}]",
                fit.slope, fit.std_error, checks.slope_min, checks.slope_max
            ),
        ),
        Criterion::new(
            "fbm_analytic_slope",
            (analytic_fit.slope - 0.5).abs() <= 1e-12,
            format!("analytic slope {}", analytic_fit.slope),
        ),
    ];
    Ok(CommandOutcome { tables: vec![t, f], criteria })
}

fn rate_model(config: &RunConfig) -> Result<RateModel, RunnerError> {
    config.require_entire_mgf()?;
    let cfg = &config.experiment;
    RateModel::with_tolerance(cfg.occupancy.clone(), cfg.kernel.kappa2(), config.ldp.t, config.ldp.quad_tol)
        .map_err(|e| RunnerError::Validation(e.to_string()))
}

fn rate_table_cmd(config: &RunConfig) -> Result<CommandOutcome, RunnerError> {
    let model = rate_model(config)?;
    let rows = rate_table(&model, &config.ldp.x_values).map_err(RunnerError::runtime)?;
    let mut t = Table::new("rate_table", "rate_table", &["x", "I", "I1", "I2", "alpha", "residual"]);
    let mut worst = 0.0f64;
    for r in &rows {
        worst = worst.max(r.residual);
        t.push(vec![num(r.x), num(r.rate), num(r.i1), num(r.i2), num(r.alpha), num(r.residual)]);
    }
    let tol = config.checks.duality_tol;
    let criteria = vec![Criterion::new("duality", worst <= tol, format!("max residual {worst:e} (bound {tol:e})"))];
    Ok(CommandOutcome { tables: vec![t], criteria })
}

fn rate_empirical(config: &RunConfig) -> Result<CommandOutcome, RunnerError> {
    rate_model(config)?;
    let ldp = &config.ldp;
    let base = ExperimentConfig { t_grid: vec![ldp.t], ..config.experiment.clone() };
    if base.r_grid.len() != 1 {
        return Err(RunnerError::Validation("rate-empirical needs a single r value".into()));
    }
    let mut outcome = CommandOutcome::default();
    let mut t = Table::new(
        "tail_estimates",
        "tail_estimates",
        &[
            "n",
            "t",
            "r",
            "x",
            "threshold",
            "alpha",
            "samples",
            "p_hat",
            "std_error",
            "effective_samples",
            "empirical_rate",
            "analytic_rate",
            "exact_tail",
        ],
    );
    let mut ns: Vec<u64> = vec![base.n];
    ns.extend(ldp.n_values.iter().copied().filter(|&n| n != base.n));
    let mut gaps = Vec::new();
    for &n in &ns {
        let cfg = ExperimentConfig { n, ..base.clone() };
        cfg.validate().map_err(|e| RunnerError::Validation(e.to_string()))?;
        let est = tilted_tail_estimate(&cfg, ldp.x, ldp.samples).map_err(RunnerError::runtime)?;
        let exact = if n <= 400 {
            let pmf = exact_current_pmf(&cfg, ldp.t, cfg.r_grid[0]).map_err(RunnerError::runtime)?;
            Some(pmf.upper_tail(est.threshold))
        } else {
            None
        };
        if n == base.n {
            if let Some(p) = exact {
                let z = (est.p_hat - p).abs() / est.std_error;
                outcome.criteria.push(Criterion::new(
                    "exact_tail",
                    z <= config.checks.oracle_se_multiple,
                    format!("tilted {:e} ± {:e} vs exact {p:e}: {z:.3} SE", est.p_hat, est.std_error),
                ));
            }
        }
        if ldp.n_values.contains(&n) {
            if let Some(a) = est.analytic_rate {
                gaps.push((n, (est.empirical_rate - a).abs()));
            }
        }
        t.push(vec![
            n.to_string(),
            num(est.t),
            num(est.r),
            num(est.x),
            est.threshold.to_string(),
            num(est.alpha),
            est.samples.to_string(),
            num(est.p_hat),
            num(est.std_error),
            num(est.effective_samples),
            num(est.empirical_rate),
            est.analytic_rate.map(num).unwrap_or_default(),
            exact.map(num).unwrap_or_default(),
        ]);
    }
    if !ldp.n_values.is_empty() {
        gaps.sort_by_key(|g| g.0);
        let decreasing = gaps.len() >= 2 && gaps.windows(2).all(|w| w[1].1 < w[0].1);
        let listing: Vec<String> = gaps.iter().map(|(n, g)| format!("n={n}: {g:.5}")).collect();
        outcome.criteria.push(Criterion::new(
            "rate_trend",
            decreasing,
            format!("|empirical − I(x)| over n: {}", listing.join(", ")),
        ));
    }
    outcome.tables.push(t);
    Ok(outcome)
}

fn fidi(config: &RunConfig) -> Result<CommandOutcome, RunnerError> {
    let rho = config.require_poisson()?;
    let settings =
        config.fidi.as_ref().ok_or_else(|| RunnerError::Validation("fidi command needs a [fidi] table".into()))?;
    let kappa2 = config.experiment.kernel.kappa2();
    let spec = FidiSpec::new(&settings.times, rho, kappa2).map_err(|e| RunnerError::Validation(e.to_string()))?;
    let k = spec.k();
    let mut outcome = CommandOutcome::default();
    let mut cols: Vec<String> = (1..=k).map(|j| format!("x{j}")).collect();
    cols.push("rate".into());
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut t = Table::new("fidi_rates", "fidi_rates", &col_refs);
    let mut worst_marginal = 0.0f64;
    for x in &settings.x_values {
        let rate = fidi_rate(&spec, x).map_err(RunnerError::runtime)?;
        if k == 1 {
            let closed = poisson_rate_closed(x[0], rho, kappa2, settings.times[0]);
            if rate.is_finite() || closed.is_finite() {
                worst_marginal = worst_marginal.max((rate - closed).abs());
            }
        }
        let mut row: Vec<String> = x.iter().copied().map(num).collect();
        row.push(num(rate));
        t.push(row);
    }
    let mut p = Table::new("fidi_patterns", "fidi_patterns", &["pattern", "alpha", "beta"]);
    for (i, u) in spec.patterns.iter().enumerate() {
        let label: String = u.iter().map(|b| char::from(b'0' + b)).collect();
        p.push(vec![label, num(spec.alpha_rates[i]), num(spec.beta_rates[i])]);
    }
    if k == 1 {
        let tol = config.checks.duality_tol;
        outcome.criteria.push(Criterion::new(
            "fidi_marginal",
            worst_marginal <= tol,
            format!("max |fidi − closed form| {worst_marginal:e} (bound {tol:e})"),
        ));
        let expected = rho * (kappa2 * settings.times[0] / (2.0 * std::f64::consts::PI)).sqrt();
        let (a, b) = (spec.alpha_rates[0], spec.beta_rates[0]);
        let err = (a - expected).abs().max((b - expected).abs());
        outcome.criteria.push(Criterion::new(
            "fidi_crossing_rates",
            err <= 1e-9,
            format!("alpha {a}, beta {b}, expected {expected}"),
        ));
    }
    outcome.tables.push(t);
    outcome.tables.push(p);
    Ok(outcome)
}

fn limit_tables(config: &RunConfig) -> Result<CommandOutcome, RunnerError> {
    let cfg = &config.experiment;
    let params = limit_params(cfg)?;
    let kappa2 = params.kappa2;
    let points = grid_points(&cfg.t_grid, &cfg.r_grid);
    let mut outcome = CommandOutcome::default();

    let mut g = Table::new(
        "gamma_table",
        "gamma_table",
        &["s", "q", "t", "r", "gamma0", "gammaq", "gamma0_integral", "gammaq_integral", "cov"],
    );
    let mut worst = 0.0f64;
    for &(s, q) in &points {
        for &(t, r) in &points {
            let g0 = gamma0(s, q, t, r, kappa2);
            let gq = gammaq(s, q, t, r, kappa2);
            let g0i = gamma0_integral(s, q, t, r, kappa2).map_err(RunnerError::runtime)?;
            let gqi = gammaq_integral(s, q, t, r, kappa2).map_err(RunnerError::runtime)?;
            worst = worst.max((g0 - g0i).abs()).max((gq - gqi).abs());
            g.push(vec![
                num(s),
                num(q),
                num(t),
                num(r),
                num(g0),
                num(gq),
                num(g0i),
                num(gqi),
                num(limit_cov(&params, (s, q), (t, r))),
            ]);
        }
    }
    let tol = config.checks.identity_tol;
    outcome.criteria.push(Criterion::new(
        "gamma_identity",
        worst <= tol,
        format!("max |closed − integral| {worst:e} (bound {tol:e})"),
    ));
    outcome.tables.push(g);

    let draws = config.limit.psi_draws;
    let mut p = Table::new("psi_table", "psi_table", &["sigma2", "x", "psi", "mc_mean", "mc_se"]);
    let mut worst_z = 0.0f64;
    for (k, &(s2, x)) in config.limit.psi_pairs.iter().enumerate() {
        let exact = psi(s2, x);
        let (mean, se) = psi_monte_carlo(s2, x, draws, replica_seed(cfg.master_seed, k as u64));
        if se > 0.0 {
            worst_z = worst_z.max((mean - exact).abs() / se);
        }
        p.push(vec![num(s2), num(x), num(exact), num(mean), num(se)]);
    }
    if draws > 1 && !config.limit.psi_pairs.is_empty() {
        outcome.criteria.push(Criterion::new(
            "psi_oracle",
            worst_z <= config.checks.se_multiple,
            format!("max |MC − closed| = {worst_z:.3} SE over {draws} draws (bound {})", config.checks.se_multiple),
        ));
    }
    outcome.tables.push(p);
    Ok(outcome)
}

/// Monte Carlo mean and standard error of `(N − x)^+` for `N ~ Normal(0, σ²)`.
pub fn psi_monte_carlo(sigma2: f64, x: f64, draws: u64, seed: u64) -> (f64, f64) {
    if draws == 0 {
        return (f64::NAN, f64::NAN);
    }
    let normal = Normal::new(0.0, sigma2.max(0.0).sqrt()).expect("finite sd");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut mean, mut m2) = (0.0, 0.0);
    for i in 0..draws {
        let v = (normal.sample(&mut rng) - x).max(0.0);
        let d = v - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (v - mean);
    }
    let var = if draws > 1 { m2 / (draws - 1) as f64 } else { 0.0 };
    (mean, (var / draws as f64).sqrt())
}
