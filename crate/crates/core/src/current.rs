//! Particle simulation of the space-time current field.
//!
//! Particles start from an i.i.d. occupation profile and move as
//! independent walks. For each grid point `(t, r)` the current `Y_n(t, r)`
//! counts particles that started right of `[r√n]` and sit at or left of
//! `[nvt] + [r√n]` at time `nt`, minus those that started at or left of
//! `[r√n]` and sit right of `[nvt] + [r√n]`.
//!
//! Only particles inside a finite window are simulated. The window is the
//! smallest on a doubling grid for which a Chernoff bound on the expected
//! number of outside particles that could affect any measured current is
//! below `window_tol`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

use crate::kernel::{chernoff_series, walk_pmf, IncrementSampler, KernelError, ValidatedKernel, DEFAULT_MASS_TOL};
use crate::occupancy::{sample_profile, OccupancyModel, OccupancyProfile};

/// Largest admissible window half-extension in lattice sites.
pub const MAX_WINDOW: i64 = 1 << 22;

/// Per-site tail mass dropped from unbounded occupation laws in
/// [`exact_current_pmf`].
const OCCUPANCY_TAIL_TOL: f64 = 1e-14;

/// Pmf entries below this are folded into the deficit while convolving.
const PMF_TRIM: f64 = 1e-30;

const MAX_PMF_WIDTH: usize = 1 << 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("n must be positive")]
    NonPositiveN,
    #[error("time horizon must be finite and positive, got {0}")]
    InvalidHorizon(f64),
    #[error("spatial half-width must be finite and positive, got {0}")]
    InvalidHalfWidth(f64),
    #[error("{grid} grid is empty")]
    EmptyGrid { grid: &'static str },
    #[error("{grid} grid must be strictly ascending")]
    GridNotAscending { grid: &'static str },
    #[error("{grid} grid value {value} outside [{lo}, {hi}]")]
    GridOutOfRange { grid: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("window_tol must lie in (0, 1e-4], got {0}")]
    WindowTol(f64),
    #[error("replicas must be positive")]
    NoReplicas,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("no window up to {max} sites meets window_tol {tol:e} (bound {bound:e} at the cap)")]
    WindowUnreachable { max: i64, tol: f64, bound: f64 },
    #[error("replica index {index} out of range (replicas = {replicas})")]
    ReplicaOutOfRange { index: u64, replicas: u64 },
    #[error("({t}, {r}) is not a valid grid point")]
    PointOutOfRange { t: f64, r: f64 },
    #[error("exact pmf support exceeds {MAX_PMF_WIDTH} entries")]
    TruncationBudgetExceeded,
    #[error("replica {index}: {source}")]
    Replica { index: u64, source: Box<SimError> },
}

/// Everything needed to simulate an ensemble of current fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: u64,
    /// Macroscopic time horizon `T`.
    pub horizon: f64,
    /// Macroscopic spatial half-width `S`.
    pub half_width: f64,
    pub t_grid: Vec<f64>,
    pub r_grid: Vec<f64>,
    pub kernel: ValidatedKernel,
    pub occupancy: OccupancyModel,
    pub window_tol: f64,
    pub master_seed: u64,
    pub replicas: u64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n == 0 {
            return Err(ConfigError::NonPositiveN);
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(ConfigError::InvalidHorizon(self.horizon));
        }
        if !(self.half_width.is_finite() && self.half_width > 0.0) {
            return Err(ConfigError::InvalidHalfWidth(self.half_width));
        }
        check_grid("t", &self.t_grid, 0.0, self.horizon)?;
        check_grid("r", &self.r_grid, -self.half_width, self.half_width)?;
        if !(self.window_tol > 0.0 && self.window_tol <= 1e-4) {
            return Err(ConfigError::WindowTol(self.window_tol));
        }
        if self.replicas == 0 {
            return Err(ConfigError::NoReplicas);
        }
        Ok(())
    }

    pub fn sqrt_n(&self) -> f64 {
        (self.n as f64).sqrt()
    }

    /// `[r√n]` for every r-grid value.
    pub fn r_sites(&self) -> Vec<i64> {
        let s = self.sqrt_n();
        self.r_grid.iter().map(|&r| bracket(r * s)).collect()
    }

    /// `[nvt]` for every t-grid value.
    pub fn drift_sites(&self) -> Vec<i64> {
        let nv = self.n as f64 * self.kernel.drift();
        self.t_grid.iter().map(|&t| bracket(nv * t)).collect()
    }

    /// Microscopic times `n·t`.
    pub fn micro_times(&self) -> Vec<f64> {
        self.t_grid.iter().map(|&t| self.n as f64 * t).collect()
    }

    /// `n^{-1/4}`.
    pub fn current_scale(&self) -> f64 {
        (self.n as f64).powf(-0.25)
    }
}

fn check_grid(grid: &'static str, values: &[f64], lo: f64, hi: f64) -> Result<(), ConfigError> {
    if values.is_empty() {
        return Err(ConfigError::EmptyGrid { grid });
    }
    for &value in values {
        if !value.is_finite() || value < lo || value > hi {
            return Err(ConfigError::GridOutOfRange { grid, value, lo, hi });
        }
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ConfigError::GridNotAscending { grid });
    }
    Ok(())
}

/// Integer part `[x]` (floor toward −∞). Products such as `n·v·t` that are
/// integers in exact arithmetic but land a few ulps below in floating point
/// are snapped to that integer first.
pub fn bracket(x: f64) -> i64 {
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * x.abs().max(1.0) {
        nearest as i64
    } else {
        x.floor() as i64
    }
}

/// SplitMix64 finalizer applied to `master_seed` advanced by `index + 1`
/// golden-ratio increments; gives each replica its own well-mixed seed.
pub fn replica_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sum over measured points of the Chernoff bound on out-of-window
/// particles affecting that point, for a window extension `w`.
pub fn window_bound(config: &ExperimentConfig, w: i64) -> f64 {
    let rho0 = config.occupancy.rho0();
    if rho0 == 0.0 {
        return 0.0;
    }
    let r_sites = config.r_sites();
    let drift_sites = config.drift_sites();
    let (rmin, rmax) = (r_sites[0], r_sites[r_sites.len() - 1]);
    let v = config.kernel.drift();
    let mut total = 0.0;
    for (&tau, &c) in config.micro_times().iter().zip(&drift_sites) {
        if tau <= 0.0 {
            continue;
        }
        let e = c as f64 - v * tau;
        for &rs in &r_sites {
            // particles left of the window cross iff X − vτ ≥ (rs − m) + 1 + e
            let left = chernoff_series(&config.kernel, tau, (w + 1 + rs - rmin) as f64, 1.0 + e, 1.0);
            // particles right of the window cross iff vτ − X ≥ (m − rs) − e
            let right = chernoff_series(&config.kernel, tau, (w + 1 + rmax - rs) as f64, -e, -1.0);
            total += rho0 * (left + right);
        }
    }
    total
}

/// Smallest `W` in `{1, 2, 4, ...}` with `window_bound(W) ≤ window_tol`.
pub fn truncation_radius(config: &ExperimentConfig) -> Result<i64, SimError> {
    config.validate()?;
    let mut w = 1i64;
    loop {
        let bound = window_bound(config, w);
        if bound <= config.window_tol {
            return Ok(w);
        }
        if w >= MAX_WINDOW {
            return Err(SimError::WindowUnreachable { max: MAX_WINDOW, tol: config.window_tol, bound });
        }
        w *= 2;
    }
}

/// One replica of the current field on the `t_grid × r_grid` lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurrentField {
    pub replica_index: u64,
    pub replica_seed: u64,
    pub rows: usize,
    pub cols: usize,
    /// `Y_n(t, r)`, row-major in `(t, r)`.
    pub values: Vec<i64>,
    /// `n^{-1/4}·Y_n(t, r)`.
    pub scaled: Vec<f64>,
}

impl CurrentField {
    pub fn value(&self, ti: usize, ri: usize) -> i64 {
        self.values[ti * self.cols + ri]
    }

    pub fn scaled_value(&self, ti: usize, ri: usize) -> f64 {
        self.scaled[ti * self.cols + ri]
    }
}

/// Starting sites and grid-time positions of every simulated particle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParticleSnapshot {
    pub profile: OccupancyProfile,
    pub starts: Vec<i64>,
    /// `positions[p][ti]` for particle `p`.
    pub positions: Vec<Vec<i64>>,
}

/// A validated configuration with its window and samplers set up.
#[derive(Debug, Clone)]
pub struct PreparedExperiment {
    config: ExperimentConfig,
    window: i64,
    site_min: i64,
    site_count: usize,
    r_sites: Vec<i64>,
    thresholds: Vec<Vec<i64>>,
    increments: IncrementSampler,
    scale: f64,
}

impl PreparedExperiment {
    pub fn new(config: &ExperimentConfig) -> Result<Self, SimError> {
        let window = truncation_radius(config)?;
        let r_sites = config.r_sites();
        let drift_sites = config.drift_sites();
        let site_min = r_sites[0] - window;
        let site_max = r_sites[r_sites.len() - 1] + window;
        let thresholds = drift_sites.iter().map(|&c| r_sites.iter().map(|&rs| c + rs).collect()).collect();
        let increments = IncrementSampler::new(&config.kernel, &config.micro_times())?;
        Ok(PreparedExperiment {
            config: config.clone(),
            window,
            site_min,
            site_count: (site_max - site_min + 1) as usize,
            r_sites,
            thresholds,
            increments,
            scale: config.current_scale(),
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    /// Window extension `W` beyond the measured `[r√n]` range.
    pub fn window(&self) -> i64 {
        self.window
    }

    /// Simulated sites `[site_min, site_max]`.
    pub fn sites(&self) -> (i64, i64) {
        (self.site_min, self.site_min + self.site_count as i64 - 1)
    }

    fn check_index(&self, index: u64) -> Result<(), SimError> {
        if index >= self.config.replicas {
            return Err(SimError::ReplicaOutOfRange { index, replicas: self.config.replicas });
        }
        Ok(())
    }

    fn rng(&self, index: u64) -> (u64, ChaCha8Rng) {
        let seed = replica_seed(self.config.master_seed, index);
        (seed, ChaCha8Rng::seed_from_u64(seed))
    }

    /// Simulates replica `index`, accumulating the current on the fly.
    pub fn simulate(&self, index: u64) -> Result<CurrentField, SimError> {
        self.check_index(index)?;
        let (seed, mut rng) = self.rng(index);
        let profile = sample_profile(&self.config.occupancy, self.site_min, self.site_count, &mut rng);
        let rows = self.thresholds.len();
        let cols = self.r_sites.len();
        let mut values = vec![0i64; rows * cols];
        let mut disp = vec![0i64; rows];
        for (offset, &count) in profile.counts.iter().enumerate() {
            let m = self.site_min + offset as i64;
            for _ in 0..count {
                self.increments.fill(&mut rng, &mut disp);
                self.add_particle(m, &disp, &mut values);
            }
        }
        Ok(self.field(index, seed, values))
    }

    /// Same draws as [`simulate`](Self::simulate), but keeps every particle.
    pub fn simulate_particles(&self, index: u64) -> Result<ParticleSnapshot, SimError> {
        self.check_index(index)?;
        let (_, mut rng) = self.rng(index);
        let profile = sample_profile(&self.config.occupancy, self.site_min, self.site_count, &mut rng);
        let rows = self.thresholds.len();
        let mut starts = Vec::new();
        let mut positions = Vec::new();
        for (offset, &count) in profile.counts.iter().enumerate() {
            let m = self.site_min + offset as i64;
            for _ in 0..count {
                let mut disp = vec![0i64; rows];
                self.increments.fill(&mut rng, &mut disp);
                starts.push(m);
                positions.push(disp.iter().map(|d| m + d).collect());
            }
        }
        Ok(ParticleSnapshot { profile, starts, positions })
    }

    /// Current field computed from a snapshot by the defining sum.
    pub fn current_from_snapshot(&self, index: u64, snap: &ParticleSnapshot) -> CurrentField {
        let rows = self.thresholds.len();
        let cols = self.r_sites.len();
        let mut values = vec![0i64; rows * cols];
        for (&m, pos) in snap.starts.iter().zip(&snap.positions) {
            let disp: Vec<i64> = pos.iter().map(|x| x - m).collect();
            self.add_particle(m, &disp, &mut values);
        }
        self.field(index, replica_seed(self.config.master_seed, index), values)
    }

    /// Current field from a snapshot via the telescoped count: particles at
    /// or left of the threshold at time `nt`, minus particles initially at
    /// or left of `[r√n]`.
    pub fn telescoped_current(&self, snap: &ParticleSnapshot) -> Vec<i64> {
        let cols = self.r_sites.len();
        let mut out = Vec::with_capacity(self.thresholds.len() * cols);
        for (ti, row) in self.thresholds.iter().enumerate() {
            for (ri, &threshold) in row.iter().enumerate() {
                let later = snap.positions.iter().filter(|p| p[ti] <= threshold).count() as i64;
                let initial = snap.starts.iter().filter(|&&m| m <= self.r_sites[ri]).count() as i64;
                out.push(later - initial);
            }
        }
        out
    }

    /// `[r√n]` per r-grid value and `[nvt] + [r√n]` per grid point.
    pub fn thresholds(&self) -> (&[i64], &[Vec<i64>]) {
        (&self.r_sites, &self.thresholds)
    }

    fn add_particle(&self, m: i64, disp: &[i64], values: &mut [i64]) {
        let cols = self.r_sites.len();
        for (ti, row) in self.thresholds.iter().enumerate() {
            let x = m + disp[ti];
            let out = &mut values[ti * cols..(ti + 1) * cols];
            for ((slot, &rs), &threshold) in out.iter_mut().zip(&self.r_sites).zip(row) {
                if m > rs {
                    if x <= threshold {
                        *slot += 1;
                    }
                } else if x > threshold {
                    *slot -= 1;
                }
            }
        }
    }

    fn field(&self, index: u64, seed: u64, values: Vec<i64>) -> CurrentField {
        let scaled = values.iter().map(|&y| y as f64 * self.scale).collect();
        CurrentField {
            replica_index: index,
            replica_seed: seed,
            rows: self.thresholds.len(),
            cols: self.r_sites.len(),
            values,
            scaled,
        }
    }
}

/// Simulates one replica; prepares the window from scratch.
pub fn simulate_replica(config: &ExperimentConfig, replica_index: u64) -> Result<CurrentField, SimError> {
    PreparedExperiment::new(config)?.simulate(replica_index)
}

/// Lazily simulated ensemble, in replica order.
pub fn run_ensemble(
    config: &ExperimentConfig,
) -> Result<impl Iterator<Item = Result<CurrentField, SimError>>, SimError> {
    let prepared = PreparedExperiment::new(config)?;
    Ok((0..config.replicas)
        .map(move |i| prepared.simulate(i).map_err(|e| SimError::Replica { index: i, source: Box::new(e) })))
}

/// Writes fields as CSV rows `(replica, t, r, Y, Y_scaled)`.
pub fn write_fields_csv<W: Write>(
    out: &mut W,
    config: &ExperimentConfig,
    fields: &[CurrentField],
) -> std::io::Result<()> {
    writeln!(out, "# schema_version=1")?;
    writeln!(out, "replica,t,r,Y,Y_scaled")?;
    for f in fields {
        for (ti, t) in config.t_grid.iter().enumerate() {
            for (ri, r) in config.r_grid.iter().enumerate() {
                writeln!(out, "{},{},{},{},{:e}", f.replica_index, t, r, f.value(ti, ri), f.scaled_value(ti, ri))?;
            }
        }
    }
    Ok(())
}

/// Distribution of an integer-valued current, with the mass lost to
/// truncation tracked separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegerPmf {
    pub offset_min: i64,
    pub masses: Vec<f64>,
    pub deficit: f64,
}

impl IntegerPmf {
    pub fn point_mass(k: i64) -> Self {
        IntegerPmf { offset_min: k, masses: vec![1.0], deficit: 0.0 }
    }

    pub fn offset_max(&self) -> i64 {
        self.offset_min + self.masses.len() as i64 - 1
    }

    pub fn mass(&self, k: i64) -> f64 {
        if k < self.offset_min || k > self.offset_max() {
            0.0
        } else {
            self.masses[(k - self.offset_min) as usize]
        }
    }

    pub fn mean(&self) -> f64 {
        let total: f64 = self.masses.iter().sum();
        self.support().map(|(k, m)| k as f64 * m).sum::<f64>() / total
    }

    pub fn variance(&self) -> f64 {
        let total: f64 = self.masses.iter().sum();
        let mean = self.mean();
        self.support().map(|(k, m)| (k as f64 - mean).powi(2) * m).sum::<f64>() / total
    }

    /// `P(Y ≥ k)`.
    pub fn upper_tail(&self, k: i64) -> f64 {
        self.support().filter(|&(j, _)| j >= k).map(|(_, m)| m).sum()
    }

    pub fn support(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.masses.iter().enumerate().map(move |(i, &m)| (self.offset_min + i as i64, m))
    }

    fn convolve(&mut self, other: &IntegerPmf) -> Result<(), SimError> {
        let width = self.masses.len() + other.masses.len() - 1;
        if width > MAX_PMF_WIDTH {
            return Err(SimError::TruncationBudgetExceeded);
        }
        let mut out = vec![0.0; width];
        for (i, &a) in self.masses.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (j, &b) in other.masses.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        self.masses = out;
        self.offset_min += other.offset_min;
        self.deficit += other.deficit;
        self.trim();
        Ok(())
    }

    fn trim(&mut self) {
        let first = self.masses.iter().position(|&m| m >= PMF_TRIM).unwrap_or(0);
        let last = self.masses.iter().rposition(|&m| m >= PMF_TRIM).unwrap_or(0);
        let dropped: f64 = self.masses[..first].iter().chain(&self.masses[last + 1..]).sum();
        self.deficit += dropped;
        self.masses = self.masses[first..=last].to_vec();
        self.offset_min += first as i64;
    }
}

/// One window site's contribution to `Y_n(t, r)`: each of its particles
/// adds `sign` with probability `prob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteCrossing {
    pub site: i64,
    pub prob: f64,
    pub sign: i64,
}

/// Crossing probabilities of every site in the truncation window of a
/// single point, with the walk-pmf mass lost to truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteCrossings {
    pub r_site: i64,
    pub window: i64,
    pub sites: Vec<SiteCrossing>,
    pub walk_deficit: f64,
}

pub fn site_crossings(config: &ExperimentConfig, t: f64, r: f64) -> Result<SiteCrossings, SimError> {
    config.validate()?;
    if !(0.0..=config.horizon).contains(&t) || r.abs() > config.half_width {
        return Err(SimError::PointOutOfRange { t, r });
    }
    let single = ExperimentConfig { t_grid: vec![t], r_grid: vec![r], ..config.clone() };
    let window = truncation_radius(&single)?;
    let rs = bracket(r * config.sqrt_n());
    let threshold = bracket(config.n as f64 * config.kernel.drift() * t) + rs;
    let walk = walk_pmf(&config.kernel, config.n as f64 * t, DEFAULT_MASS_TOL)?;
    let cdf = walk.cdf_table();
    let sites = ((rs - window)..=(rs + window))
        .map(|m| {
            let (prob, sign) = if m > rs { (cdf.at_most(threshold - m), 1) } else { (cdf.above(threshold - m), -1) };
            SiteCrossing { site: m, prob: prob.clamp(0.0, 1.0), sign }
        })
        .collect();
    Ok(SiteCrossings { r_site: rs, window, sites, walk_deficit: cdf.deficit() })
}

/// Exact law of `Y_n(t, r)` at one point: an independent signed binomial
/// mixture per window site, convolved over the window.
pub fn exact_current_pmf(config: &ExperimentConfig, t: f64, r: f64) -> Result<IntegerPmf, SimError> {
    config.validate()?;
    if !(0.0..=config.horizon).contains(&t) || r.abs() > config.half_width {
        return Err(SimError::PointOutOfRange { t, r });
    }
    if t == 0.0 || config.occupancy.rho0() == 0.0 {
        return Ok(IntegerPmf::point_mass(0));
    }
    let crossings = site_crossings(config, t, r)?;
    let (occupancy, occupancy_deficit) = config.occupancy.pmf_table(OCCUPANCY_TAIL_TOL);

    let mut pmf = IntegerPmf::point_mass(0);
    for c in &crossings.sites {
        let mut site = signed_binomial_mixture(&occupancy, c.prob, c.sign);
        site.deficit += occupancy_deficit + crossings.walk_deficit * config.occupancy.rho0();
        pmf.convolve(&site)?;
    }
    Ok(pmf)
}

/// Law of `sign·Binomial(η, p)` with `η` drawn from `occupancy`.
fn signed_binomial_mixture(occupancy: &[f64], p: f64, sign: i64) -> IntegerPmf {
    let p = p.clamp(0.0, 1.0);
    let kmax = occupancy.len() - 1;
    let mut counts = vec![0.0; kmax + 1];
    // binomial rows built by the recurrence over η
    let mut row = vec![1.0];
    for (eta, &w) in occupancy.iter().enumerate() {
        if eta > 0 {
            let mut next = vec![0.0; row.len() + 1];
            for (k, &b) in row.iter().enumerate() {
                next[k] += b * (1.0 - p);
                next[k + 1] += b * p;
            }
            row = next;
        }
        if w > 0.0 {
            for (k, &b) in row.iter().enumerate() {
                counts[k] += w * b;
            }
        }
    }
    if sign > 0 {
        IntegerPmf { offset_min: 0, masses: counts, deficit: 0.0 }
    } else {
        counts.reverse();
        IntegerPmf { offset_min: -(kmax as i64), masses: counts, deficit: 0.0 }
    }
}
