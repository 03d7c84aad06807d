//! Importance sampling of `P(Y_n(t, r) ≥ x√n)`.
//!
//! `Y_n(t, r)` is a sum over window sites of independent signed crossing
//! counts, so its exponential tilt by `α` factorizes: site `m` gets its
//! occupation law tilted by `θ_m = log M_m(α)`, where
//! `M_m(α) = 1 + (e^{±α} − 1)p_m`, and each particle's crossing probability
//! moves from `p_m` to `p_m e^{±α} / M_m(α)`. The likelihood ratio of a draw
//! is then `exp(Σ_m γ(θ_m) − αY)` exactly. As `n → ∞`, `θ_m` approaches
//! `Z_α(m/√n − r)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{alpha_of_x, rate_dual, LdpError, RateModel};
use crate::current::{bracket, replica_seed, site_crossings, ExperimentConfig, PreparedExperiment, SimError};
use crate::occupancy::{OccupancyKind, SiteSampler};
use crate::special::log_sum_exp;

/// Estimates with fewer effective samples are rejected.
pub const MIN_EFFECTIVE_SAMPLES: f64 = 100.0;

const BATCH: u64 = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub n: u64,
    pub t: f64,
    pub r: f64,
    pub x: f64,
    /// Smallest integer `k` with `k ≥ x√n`.
    pub threshold: i64,
    pub alpha: f64,
    pub samples: u64,
    pub p_hat: f64,
    pub std_error: f64,
    pub relative_se: f64,
    pub effective_samples: f64,
    pub empirical_rate: f64,
    /// `I(x)` of the limiting model, when it can be evaluated.
    pub analytic_rate: Option<f64>,
}

enum CrossingSampler {
    Poisson(Poisson<f64>),
    Thinned { occupancy: SiteSampler, q: f64 },
}

impl CrossingSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        match self {
            CrossingSampler::Poisson(d) => d.sample(rng) as i64,
            CrossingSampler::Thinned { occupancy, q } => {
                let eta = occupancy.sample(rng);
                if eta == 0 || *q == 0.0 {
                    0
                } else {
                    Binomial::new(eta, *q).expect("probability in [0, 1]").sample(rng) as i64
                }
            }
        }
    }
}

fn single_point(config: &ExperimentConfig) -> Result<(f64, f64), LdpError> {
    if config.t_grid.len() != 1 || config.r_grid.len() != 1 {
        return Err(LdpError::InvalidParameters("tail estimates need exactly one t and one r".into()));
    }
    let (t, r) = (config.t_grid[0], config.r_grid[0]);
    if t <= 0.0 {
        return Err(LdpError::InvalidParameters(format!("tail estimates need t > 0, got {t}")));
    }
    config.validate().map_err(SimError::from)?;
    Ok((t, r))
}

fn threshold(config: &ExperimentConfig, x: f64) -> i64 {
    -bracket(-x * config.sqrt_n())
}

fn analytic_rate(config: &ExperimentConfig, t: f64, x: f64) -> Option<f64> {
    let model = RateModel::new(config.occupancy.clone(), config.kernel.kappa2(), t).ok()?;
    rate_dual(&model, x).ok()
}

#[derive(Debug, Clone, Copy)]
struct BatchSums {
    count: u64,
    /// `log Σ w·1{Y ≥ k}` and `log Σ w²·1{Y ≥ k}`.
    log_w: f64,
    log_w2: f64,
}

fn finish(
    config: &ExperimentConfig,
    (t, r, x, k, alpha): (f64, f64, f64, i64, f64),
    batches: Vec<BatchSums>,
) -> Result<TailEstimate, LdpError> {
    let samples: u64 = batches.iter().map(|b| b.count).sum();
    let log_w = log_sum_exp(&batches.iter().map(|b| b.log_w).collect::<Vec<_>>());
    let log_w2 = log_sum_exp(&batches.iter().map(|b| b.log_w2).collect::<Vec<_>>());
    let nf = samples as f64;
    let effective_samples = if log_w.is_finite() { (2.0 * log_w - log_w2).exp() } else { 0.0 };
    if effective_samples < MIN_EFFECTIVE_SAMPLES {
        return Err(LdpError::DegenerateWeights { ess: effective_samples, min: MIN_EFFECTIVE_SAMPLES });
    }
    let p_hat = (log_w - nf.ln()).exp();
    let second = (log_w2 - nf.ln()).exp();
    let std_error = ((second - p_hat * p_hat).max(0.0) / nf).sqrt();
    Ok(TailEstimate {
        n: config.n,
        t,
        r,
        x,
        threshold: k,
        alpha,
        samples,
        p_hat,
        std_error,
        relative_se: std_error / p_hat,
        effective_samples,
        empirical_rate: -p_hat.ln() / config.sqrt_n(),
        analytic_rate: analytic_rate(config, t, x),
    })
}

/// Importance-sampling estimate of `P(Y_n(t, r) ≥ x√n)` at the single grid
/// point of `config`, tilting by `α = α(x)` from the limiting model. Only
/// upward tilts are used, so `x ≤ 0` reduces to plain sampling of the
/// factorized law.
pub fn tilted_tail_estimate(config: &ExperimentConfig, x: f64, samples: u64) -> Result<TailEstimate, LdpError> {
    let (t, r) = single_point(config)?;
    let model = RateModel::new(config.occupancy.clone(), config.kernel.kappa2(), t)?;
    let alpha = if x > 0.0 { alpha_of_x(&model, x)? } else { 0.0 };
    let k = threshold(config, x);
    let crossings = site_crossings(config, t, r)?;
    let occ = &config.occupancy;

    let mut log_z = 0.0;
    let mut samplers = Vec::with_capacity(crossings.sites.len());
    for c in crossings.sites.iter().filter(|c| c.prob > 0.0) {
        let s = c.sign as f64;
        let theta = ((s * alpha).exp_m1() * c.prob).ln_1p();
        log_z += occ.gamma(theta)?;
        let q = (c.prob * (s * alpha).exp() / theta.exp()).min(1.0);
        let sampler = match occ.kind() {
            OccupancyKind::Poisson { rho } => {
                // thinning a Poisson(ρe^θ) occupation by q gives Poisson(ρ p e^{±α})
                CrossingSampler::Poisson(Poisson::new(rho * theta.exp() * q).expect("positive mean"))
            }
            _ => CrossingSampler::Thinned { occupancy: occ.tilted(theta)?.sampler(), q },
        };
        samplers.push((c.sign, sampler));
    }

    let batches = samples.div_ceil(BATCH);
    let sums: Vec<BatchSums> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(replica_seed(config.master_seed, b));
            let count = BATCH.min(samples - b * BATCH);
            let mut hits = Vec::new();
            for _ in 0..count {
                let y: i64 = samplers.iter().map(|(sign, s)| sign * s.sample(&mut rng)).sum();
                if y >= k {
                    hits.push(log_z - alpha * y as f64);
                }
            }
            let doubled: Vec<f64> = hits.iter().map(|l| 2.0 * l).collect();
            BatchSums { count, log_w: log_sum_exp(&hits), log_w2: log_sum_exp(&doubled) }
        })
        .collect();
    finish(config, (t, r, x, k, alpha), sums)
}

/// Plain Monte Carlo of the same tail from full particle simulations.
pub fn plain_tail_estimate(config: &ExperimentConfig, x: f64, samples: u64) -> Result<TailEstimate, LdpError> {
    let (t, r) = single_point(config)?;
    let k = threshold(config, x);
    let prepared = PreparedExperiment::new(&ExperimentConfig { replicas: samples.max(1), ..config.clone() })?;
    let batches = samples.div_ceil(BATCH);
    let sums: Result<Vec<BatchSums>, SimError> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let count = BATCH.min(samples - b * BATCH);
            let mut hits = 0u64;
            for index in b * BATCH..b * BATCH + count {
                if prepared.simulate(index)?.values[0] >= k {
                    hits += 1;
                }
            }
            let log_hits = if hits == 0 { f64::NEG_INFINITY } else { (hits as f64).ln() };
            Ok(BatchSums { count, log_w: log_hits, log_w2: log_hits })
        })
        .collect();
    finish(config, (t, r, x, k, 0.0), sums?)
}
