//! End-to-end acceptance checks AC1–AC13. Each criterion prints one PASS or
//! FAIL line; the process exits nonzero if any fails.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use stcurrent::current::{exact_current_pmf, ExperimentConfig, PreparedExperiment};
use stcurrent::gof::{chi_square_integer, ks_two_sample};
use stcurrent::kernel::ValidatedKernel;
use stcurrent::ldp::{
    fidi_rate, poisson_rate_closed, rate_decomposed, rate_dual, tilted_tail_estimate, FidiSpec, RateModel,
};
use stcurrent::limit::{
    fbm_cov, gamma0, gamma0_integral, gammaq, gammaq_integral, limit_cov, IntegralSampler, LimitCovariance, Mesh,
};
use stcurrent::occupancy::OccupancyModel;
use stcurrent::runner::{
    execute_config, load_config, Command, OutputFormat, Overrides, RunConfig, RunManifest, RunOptions,
};
use stcurrent::special::psi;
use stcurrent::stats::scaling_exponent_of;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn kernel() -> ValidatedKernel {
    ValidatedKernel::from_pairs(&[(1, 0.7), (-1, 0.3)]).unwrap()
}

fn poisson(rho: f64) -> OccupancyModel {
    OccupancyModel::poisson(rho).unwrap()
}

fn single_point(n: u64, occupancy: OccupancyModel, seed: u64, replicas: u64) -> ExperimentConfig {
    ExperimentConfig {
        n,
        horizon: 1.0,
        half_width: 1.0,
        t_grid: vec![1.0],
        r_grid: vec![0.0],
        kernel: kernel(),
        occupancy,
        window_tol: 1e-6,
        master_seed: seed,
        replicas,
    }
}

/// Runs a command on a resolved config and returns the manifest.
fn run_pipeline(command: Command, config: &RunConfig, workers: usize, dir: &Path) -> (i32, RunManifest) {
    let options = RunOptions { out_dir: dir.to_path_buf(), workers, format: OutputFormat::Csv };
    let code = execute_config(command, config, &Overrides::default(), &options).unwrap_or_else(|e| e.exit_code());
    (code, RunManifest::read(dir).expect("manifest written"))
}

fn criterion<'a>(m: &'a RunManifest, name: &str) -> Option<&'a stcurrent::runner::Criterion> {
    m.criteria.iter().find(|c| c.name == name)
}

struct CovRun {
    code: i32,
    manifest: RunManifest,
    config_ok: Result<(), String>,
}

fn cov_check_run() -> CovRun {
    let config = load_config(&configs_dir().join("cov_check.toml"), &Overrides::default()).expect("config loads");
    let e = &config.experiment;
    let expected_points = [(0.5, 0.0), (1.0, 0.0), (1.0, 0.5), (0.5, -0.5)];
    let config_ok = if e.n == 2500
        && e.replicas == 40_000
        && e.kernel == kernel()
        && e.occupancy == poisson(1.0)
        && config.checks.points.as_deref() == Some(&expected_points[..])
        && config.checks.se_multiple == 4.0
        && config.checks.relative_allowance == 0.10
        && config.checks.mean_ratio_max == 3.0
        && config.checks.normality_point == Some((1.0, 0.0))
    {
        Ok(())
    } else {
        Err("cov_check.toml does not match the acceptance setup".into())
    };
    let dir = tempfile::tempdir().unwrap();
    let (code, manifest) = run_pipeline(Command::CovCheck, &config, workers(), dir.path());
    CovRun { code, manifest, config_ok }
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn from_criterion(run: &CovRun, name: &str) -> Outcome {
    if let Err(e) = &run.config_ok {
        return outcome(false, e.clone());
    }
    match criterion(&run.manifest, name) {
        Some(c) => outcome(c.passed, format!("{} (exit {})", c.detail, run.code)),
        None => outcome(
            false,
            format!("criterion {name} missing; run status {:?} {:?}", run.manifest.status, run.manifest.error),
        ),
    }
}

fn ac3() -> Outcome {
    let config = load_config(&configs_dir().join("fbm_check.toml"), &Overrides::default()).expect("config loads");
    let e = &config.experiment;
    if !(e.n == 2500 && e.replicas == 20_000 && e.t_grid == [0.25, 0.5, 1.0, 2.0, 4.0] && e.r_grid == [0.0]) {
        return outcome(false, "fbm_check.toml does not match the acceptance setup");
    }
    let dir = tempfile::tempdir().unwrap();
    let (code, m) = run_pipeline(Command::FbmCheck, &config, workers(), dir.path());
    let times = [0.25, 0.5, 1.0, 2.0, 4.0];
    let variances: Vec<f64> = times.iter().map(|&t| fbm_cov(t, t, 1.0, 1.0)).collect();
    let analytic = scaling_exponent_of(&times, &variances).unwrap().slope;
    let slope = criterion(&m, "fbm_slope");
    let passed = code == 0 && slope.is_some_and(|c| c.passed) && analytic == 0.5;
    outcome(passed, format!("{}; analytic slope {analytic}", slope.map_or("missing".into(), |c| c.detail.clone())))
}

fn ac5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let s = rng.random_range(0.05..4.0);
        let t = rng.random_range(0.05..4.0);
        let q = rng.random_range(-2.0..2.0);
        let r = rng.random_range(-2.0..2.0);
        let kappa2 = rng.random_range(0.25..3.0);
        let e0 = (gamma0(s, q, t, r, kappa2) - gamma0_integral(s, q, t, r, kappa2).unwrap()).abs();
        let eq = (gammaq(s, q, t, r, kappa2) - gammaq_integral(s, q, t, r, kappa2).unwrap()).abs();
        worst = worst.max(e0).max(eq);
    }
    outcome(worst <= 1e-8, format!("max |closed − integral| = {worst:.3e} over 50 configurations (≤ 1e-8)"))
}

fn ac6() -> Outcome {
    let draws = 1_000_000u64;
    let mut worst = 0.0f64;
    let mut k = 0u64;
    for &s2 in &[0.5, 1.0, 2.0] {
        for &x in &[-1.0, 0.0, 1.0] {
            let normal = Normal::new(0.0, f64::sqrt(s2)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(600 + k);
            k += 1;
            let (mut sum, mut sum2) = (0.0f64, 0.0f64);
            for _ in 0..draws {
                let v = (normal.sample(&mut rng) - x).max(0.0);
                sum += v;
                sum2 += v * v;
            }
            let n = draws as f64;
            let mean = sum / n;
            let se = ((sum2 / n - mean * mean) * n / (n - 1.0) / n).sqrt();
            worst = worst.max((mean - psi(s2, x)).abs() / se);
        }
    }
    outcome(worst <= 4.0, format!("max |MC − Ψ| = {worst:.3} SE over 9 pairs at 1e6 draws (≤ 4)"))
}

fn x_grid() -> Vec<f64> {
    (-12..=12).map(|k| k as f64 * 0.25).collect()
}

fn ac7() -> Outcome {
    let models = [
        ("Poisson(0.5)", poisson(0.5)),
        ("Poisson(2)", poisson(2.0)),
        ("Deterministic(1)", OccupancyModel::deterministic(1)),
        ("Custom{0:.5,2:.5}", OccupancyModel::custom(&[(0, 0.5), (2, 0.5)]).unwrap()),
    ];
    let mut worst = 0.0f64;
    let mut errors = Vec::new();
    for (name, occ) in models {
        let model = RateModel::new(occ, 1.0, 1.0).unwrap();
        for x in x_grid() {
            match (rate_decomposed(&model, x), rate_dual(&model, x)) {
                (Ok(d), Ok(dual)) => worst = worst.max((d.total - dual).abs()),
                (a, b) => errors.push(format!("{name} x={x}: {:?} {:?}", a.err(), b.err())),
            }
        }
    }
    outcome(
        errors.is_empty() && worst <= 1e-6,
        format!("max |I1 + I2 − Λ*| = {worst:.3e} (≤ 1e-6); errors: {errors:?}"),
    )
}

fn ac8() -> Outcome {
    let mut worst = 0.0f64;
    for &rho in &[0.5, 1.0, 2.0] {
        let model = RateModel::new(poisson(rho), 1.0, 1.0).unwrap();
        for x in x_grid() {
            let dual = rate_dual(&model, x).unwrap();
            worst = worst.max((poisson_rate_closed(x, rho, 1.0, 1.0) - dual).abs());
        }
    }
    let t = 2.0 * std::f64::consts::PI;
    let x = 2.0 * 1f64.sinh();
    let expected = 2.0 - 2.0 * (-1f64).exp();
    let spot_closed = poisson_rate_closed(x, 1.0, 1.0, t);
    let spot_dual = rate_dual(&RateModel::new(poisson(1.0), 1.0, t).unwrap(), x).unwrap();
    let spot = (spot_closed - expected).abs().max((spot_dual - expected).abs());
    outcome(
        worst <= 1e-6 && spot <= 1e-6,
        format!("max |closed − dual| = {worst:.3e}; spot I(2 sinh 1) = {spot_closed:.9} (expected {expected:.9}, err {spot:.1e})"),
    )
}

fn ac9() -> Outcome {
    let cfg = single_point(100, poisson(1.0), 9, 100_000);
    let prepared = PreparedExperiment::new(&cfg).unwrap();
    let samples: Vec<i64> = (0..cfg.replicas).map(|i| prepared.simulate(i).unwrap().values[0]).collect();
    let pmf = exact_current_pmf(&cfg, 1.0, 0.0).unwrap();
    let cells: Vec<(i64, f64)> = pmf.support().collect();
    let chi = chi_square_integer(&samples, &cells, 5.0);

    let est = tilted_tail_estimate(&cfg, 1.0, 100_000).unwrap();
    let exact = pmf.upper_tail(est.threshold);
    let z = (est.p_hat - exact).abs() / est.std_error;
    outcome(
        chi.p_value > 0.01 && z <= 3.0,
        format!(
            "chi-square p = {:.4} (> 0.01, {} dof); tilted P(Y ≥ {}) = {:.4e} ± {:.1e} vs exact {exact:.4e}: {z:.2} SE (≤ 3)",
            chi.p_value, chi.dof, est.threshold, est.p_hat, est.std_error
        ),
    )
}

fn ac10() -> Outcome {
    let mut gaps = Vec::new();
    for (k, &n) in [100u64, 400, 1600].iter().enumerate() {
        let est = tilted_tail_estimate(&single_point(n, poisson(1.0), 10 + k as u64, 1), 1.0, 100_000).unwrap();
        gaps.push((n, (est.empirical_rate - est.analytic_rate.unwrap()).abs()));
    }
    let decreasing = gaps.windows(2).all(|w| w[1].1 < w[0].1);
    outcome(decreasing, format!("|empirical − I(1)| by n: {gaps:?}"))
}

fn ac11() -> Outcome {
    let (rho, kappa2, t) = (1.0, 1.0, 1.0);
    let spec = FidiSpec::new(&[t], rho, kappa2).unwrap();
    let mut worst = 0.0f64;
    for x in [-1.5, -0.5, 0.25, 1.0, 2.0] {
        worst = worst.max((fidi_rate(&spec, &[x]).unwrap() - poisson_rate_closed(x, rho, kappa2, t)).abs());
    }
    let expected = rho * (kappa2 * t / (2.0 * std::f64::consts::PI)).sqrt();
    let err = (spec.alpha_rates[0] - expected).abs().max((spec.beta_rates[0] - expected).abs());
    outcome(
        worst <= 1e-6 && err <= 1e-9,
        format!("max |fidi − closed| = {worst:.3e} (≤ 1e-6); |α − ρ√(κ2t/2π)|, |β − ρ√(κ2t/2π)| ≤ {err:.1e} (≤ 1e-9)"),
    )
}

fn ac12() -> Outcome {
    let k = kernel();
    let tau = 10.0;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let fast: Vec<f64> = (0..100_000).map(|_| k.sample_displacement(tau, &mut rng) as f64).collect();
    let slow: Vec<f64> = (0..100_000).map(|_| k.gillespie_reference(tau, &mut rng) as f64).collect();
    let ks = ks_two_sample(&fast, &slow);

    let params = LimitCovariance::new(1.0, 1.0, 1.0).unwrap();
    let points = [(0.5, 0.0), (1.0, 0.0), (1.0, 0.5), (0.5, -0.5)];
    let sampler = IntegralSampler::new(&params, &points, Mesh::default_for(&params, &points)).unwrap();
    let draws = 100_000usize;
    let d = points.len();
    let mut sum = vec![0.0; d];
    let mut cross = vec![0.0; d * d];
    for _ in 0..draws {
        let z = sampler.sample(&mut rng);
        for i in 0..d {
            sum[i] += z[i];
            for j in 0..d {
                cross[i * d + j] += z[i] * z[j];
            }
        }
    }
    let n = draws as f64;
    let mut worst = 0.0f64;
    for i in 0..d {
        for j in i..d {
            let empirical = (cross[i * d + j] - sum[i] * sum[j] / n) / (n - 1.0);
            let analytic = limit_cov(&params, points[i], points[j]);
            worst = worst.max((empirical - analytic).abs() / analytic.abs());
        }
    }
    outcome(
        ks.p_value > 0.01 && worst <= 0.05,
        format!(
            "KS p = {:.4} (> 0.01); integral sampler max relative covariance error {:.4} (≤ 0.05)",
            ks.p_value, worst
        ),
    )
}

fn ac13() -> Outcome {
    let small = r#"
[experiment]
n = 400
horizon = 1.0
half_width = 1.0
t_grid = [0.5, 1.0]
r_grid = [-0.5, 0.0, 0.5]
seed = 1313
replicas = 2000

[kernel]
1 = 0.7
-1 = 0.3

[occupancy]
type = "poisson"
rho = 1.0

[ldp]
t = 1.0
x = 1.0
samples = 20000
"#;
    let mut config = stcurrent::runner::parse_config(small, &Overrides::default()).unwrap();
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for command in [Command::CovCheck, Command::Simulate, Command::RateEmpirical] {
        if command == Command::RateEmpirical {
            config.experiment.r_grid = vec![0.0];
        }
        let mut reference: Option<BTreeMap<String, Vec<u8>>> = None;
        for workers in [1usize, 2, 4, 1] {
            let dir = tempfile::tempdir().unwrap();
            let (_, manifest) = run_pipeline(command, &config, workers, dir.path());
            let files: BTreeMap<String, Vec<u8>> = manifest
                .outputs
                .iter()
                .map(|o| (o.path.clone(), std::fs::read(dir.path().join(&o.path)).unwrap()))
                .collect();
            match &reference {
                None => reference = Some(files),
                Some(r) => {
                    compared += 1;
                    if *r != files {
                        mismatches.push(format!("{} with {workers} workers", command.name()));
                    }
                }
            }
        }
    }
    outcome(mismatches.is_empty(), format!("{compared} reruns compared byte for byte; mismatches: {mismatches:?}"))
}

fn main() {
    // honour `cargo test -- <filter>` so filtered runs of other targets skip this one
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    let started = std::time::Instant::now();
    let cov = cov_check_run();
    type Check<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);
    let checks: Vec<Check> = vec![
        ("AC1 covariance", Box::new(|| from_criterion(&cov, "covariance"))),
        ("AC2 mean", Box::new(|| from_criterion(&cov, "mean"))),
        ("AC3 fbm scaling", Box::new(ac3)),
        ("AC4 gaussianity", Box::new(|| from_criterion(&cov, "normality"))),
        ("AC5 gamma identity", Box::new(ac5)),
        ("AC6 psi oracle", Box::new(ac6)),
        ("AC7 ldp duality", Box::new(ac7)),
        ("AC8 poisson closed form", Box::new(ac8)),
        ("AC9 exact oracle", Box::new(ac9)),
        ("AC10 ld trend", Box::new(ac10)),
        ("AC11 fidi marginal", Box::new(ac11)),
        ("AC12 samplers", Box::new(ac12)),
        ("AC13 determinism", Box::new(ac13)),
    ];
    let mut failed = 0;
    for (name, check) in &checks {
        let t = std::time::Instant::now();
        let o = check();
        failed += usize::from(!o.passed);
        println!("{} {name}: {} [{:.1}s]", if o.passed { "PASS" } else { "FAIL" }, o.detail, t.elapsed().as_secs_f64());
    }
    println!(
        "acceptance: {} passed, {failed} failed in {:.1}s",
        checks.len() - failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
