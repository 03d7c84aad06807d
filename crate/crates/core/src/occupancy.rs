//! Laws of the initial occupation variables and their cumulant functions.
//!
//! Sites are occupied independently with a common law. Besides sampling,
//! the module exposes the log moment generating function `γ`, its first two
//! derivatives and its convex dual `γ*`, which the large deviation code
//! consumes.

use rand::Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roots::solve_increasing;
use crate::special::log_sum_exp;

/// Largest occupation value accepted in a custom pmf.
pub const MAX_CUSTOM_VALUE: u64 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OccupancyError {
    #[error("Poisson/Geometric mean must be finite and positive, got {0}")]
    InvalidMean(f64),
    #[error("custom pmf is empty")]
    EmptyPmf,
    #[error("custom pmf has invalid probability {prob} at value {value}")]
    InvalidProbability { value: u64, prob: f64 },
    #[error("custom pmf value {0} outside the supported range")]
    ValueOutOfRange(u64),
    #[error("custom pmf value {0} listed more than once")]
    DuplicateValue(u64),
    #[error("custom pmf probabilities sum to zero")]
    ZeroTotalMass,
    #[error("moment generating function diverges at theta = {theta} (radius {radius})")]
    MgfDiverges { theta: f64, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum OccupancyKind {
    Poisson {
        rho: f64,
    },
    Deterministic {
        c: u64,
    },
    /// Geometric on `{0, 1, 2, ...}` with mean `rho`.
    Geometric {
        rho: f64,
    },
    /// Finite-support law, stored normalized and sorted by value.
    Custom {
        pmf: Vec<(u64, f64)>,
    },
}

/// A per-site occupation law together with its mean and variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyModel {
    kind: OccupancyKind,
    rho0: f64,
    v0: f64,
}

/// Particle counts on consecutive sites starting at `site_min`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyProfile {
    pub site_min: i64,
    pub counts: Vec<u64>,
}

impl OccupancyProfile {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

impl OccupancyModel {
    pub fn poisson(rho: f64) -> Result<Self, OccupancyError> {
        check_mean(rho)?;
        Ok(OccupancyModel { kind: OccupancyKind::Poisson { rho }, rho0: rho, v0: rho })
    }

    pub fn deterministic(c: u64) -> Self {
        OccupancyModel { kind: OccupancyKind::Deterministic { c }, rho0: c as f64, v0: 0.0 }
    }

    pub fn geometric(rho: f64) -> Result<Self, OccupancyError> {
        check_mean(rho)?;
        Ok(OccupancyModel { kind: OccupancyKind::Geometric { rho }, rho0: rho, v0: rho * (1.0 + rho) })
    }

    /// Builds a finite-support law from (value, weight) pairs; weights are
    /// normalized and zero-weight values dropped.
    pub fn custom(pairs: &[(u64, f64)]) -> Result<Self, OccupancyError> {
        if pairs.is_empty() {
            return Err(OccupancyError::EmptyPmf);
        }
        let mut pmf: Vec<(u64, f64)> = Vec::with_capacity(pairs.len());
        for &(value, prob) in pairs {
            if !prob.is_finite() || prob < 0.0 {
                return Err(OccupancyError::InvalidProbability { value, prob });
            }
            if value > MAX_CUSTOM_VALUE {
                return Err(OccupancyError::ValueOutOfRange(value));
            }
            if pmf.iter().any(|p| p.0 == value) {
                return Err(OccupancyError::DuplicateValue(value));
            }
            pmf.push((value, prob));
        }
        let total: f64 = pmf.iter().map(|p| p.1).sum();
        if total <= 0.0 {
            return Err(OccupancyError::ZeroTotalMass);
        }
        pmf.retain(|p| p.1 > 0.0);
        pmf.sort_by_key(|p| p.0);
        for p in &mut pmf {
            p.1 /= total;
        }
        let rho0: f64 = pmf.iter().map(|&(k, p)| k as f64 * p).sum();
        let v0: f64 = pmf.iter().map(|&(k, p)| (k as f64 - rho0).powi(2) * p).sum();
        Ok(OccupancyModel { kind: OccupancyKind::Custom { pmf }, rho0, v0 })
    }

    /// Rebuilds the model from its kind, recomputing the moments.
    pub fn from_kind(kind: &OccupancyKind) -> Result<Self, OccupancyError> {
        match kind {
            OccupancyKind::Poisson { rho } => Self::poisson(*rho),
            OccupancyKind::Deterministic { c } => Ok(Self::deterministic(*c)),
            OccupancyKind::Geometric { rho } => Self::geometric(*rho),
            OccupancyKind::Custom { pmf } => Self::custom(pmf),
        }
    }

    pub fn kind(&self) -> &OccupancyKind {
        &self.kind
    }

    /// Per-site mean.
    pub fn rho0(&self) -> f64 {
        self.rho0
    }

    /// Per-site variance.
    pub fn v0(&self) -> f64 {
        self.v0
    }

    /// True when `γ` is finite on the whole real line.
    pub fn has_entire_mgf(&self) -> bool {
        !matches!(self.kind, OccupancyKind::Geometric { .. })
    }

    /// Supremum of θ with finite MGF.
    pub fn mgf_radius(&self) -> f64 {
        match self.kind {
            OccupancyKind::Geometric { rho } => ((1.0 + rho) / rho).ln(),
            _ => f64::INFINITY,
        }
    }

    fn check_theta(&self, theta: f64) -> Result<(), OccupancyError> {
        let radius = self.mgf_radius();
        if theta >= radius {
            return Err(OccupancyError::MgfDiverges { theta, radius });
        }
        Ok(())
    }

    /// `γ(θ) = log E e^{θη}`.
    pub fn gamma(&self, theta: f64) -> Result<f64, OccupancyError> {
        self.check_theta(theta)?;
        Ok(match &self.kind {
            OccupancyKind::Poisson { rho } => rho * theta.exp_m1(),
            OccupancyKind::Deterministic { c } => *c as f64 * theta,
            OccupancyKind::Geometric { rho } => {
                let q = rho / (1.0 + rho);
                // log((1 − q) / (1 − q e^θ))
                -(-q * theta.exp_m1() / (1.0 - q)).ln_1p()
            }
            OccupancyKind::Custom { pmf } => custom_log_mgf(pmf, theta),
        })
    }

    /// `γ′(θ)`, the mean of the θ-tilted law.
    pub fn gamma_prime(&self, theta: f64) -> Result<f64, OccupancyError> {
        self.check_theta(theta)?;
        Ok(match &self.kind {
            OccupancyKind::Poisson { rho } => rho * theta.exp(),
            OccupancyKind::Deterministic { c } => *c as f64,
            OccupancyKind::Geometric { rho } => {
                let qe = rho / (1.0 + rho) * theta.exp();
                qe / (1.0 - qe)
            }
            OccupancyKind::Custom { pmf } => tilted_moments(pmf, theta).0,
        })
    }

    /// `γ″(θ)`, the variance of the θ-tilted law.
    pub fn gamma_second(&self, theta: f64) -> Result<f64, OccupancyError> {
        self.check_theta(theta)?;
        Ok(match &self.kind {
            OccupancyKind::Poisson { rho } => rho * theta.exp(),
            OccupancyKind::Deterministic { .. } => 0.0,
            OccupancyKind::Geometric { rho } => {
                let qe = rho / (1.0 + rho) * theta.exp();
                qe / ((1.0 - qe) * (1.0 - qe))
            }
            OccupancyKind::Custom { pmf } => tilted_moments(pmf, theta).1,
        })
    }

    /// Convex dual `γ*(x) = sup_λ {λx − γ(λ)}`; `+∞` where unreachable.
    pub fn gamma_star(&self, x: f64) -> f64 {
        if !x.is_finite() || x < 0.0 {
            return f64::INFINITY;
        }
        match &self.kind {
            OccupancyKind::Poisson { rho } => {
                if x == 0.0 {
                    *rho
                } else {
                    x * (x / rho).ln() - x + rho
                }
            }
            OccupancyKind::Deterministic { c } => {
                if x == *c as f64 {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            OccupancyKind::Geometric { rho } => {
                let q = rho / (1.0 + rho);
                if x == 0.0 {
                    -(-q).ln_1p()
                } else {
                    x * (x / (q * (1.0 + x))).ln() - (-q).ln_1p() - x.ln_1p()
                }
            }
            OccupancyKind::Custom { pmf } => custom_gamma_star(pmf, x),
        }
    }

    /// Probability of `k` particles at a site.
    pub fn pmf(&self, k: u64) -> f64 {
        match &self.kind {
            OccupancyKind::Poisson { rho } => {
                (-rho + k as f64 * rho.ln() - statrs::function::gamma::ln_gamma(k as f64 + 1.0)).exp()
            }
            OccupancyKind::Deterministic { c } => f64::from(k == *c),
            OccupancyKind::Geometric { rho } => {
                let q = rho / (1.0 + rho);
                (1.0 - q) * q.powi(k as i32)
            }
            OccupancyKind::Custom { pmf } => pmf.iter().find(|p| p.0 == k).map_or(0.0, |p| p.1),
        }
    }

    /// Masses for `k = 0..=K`, with `K` the first count whose upper tail is
    /// at most `tail_tol`; returns the masses and the discarded tail.
    pub fn pmf_table(&self, tail_tol: f64) -> (Vec<f64>, f64) {
        match &self.kind {
            OccupancyKind::Deterministic { c } => {
                let mut m = vec![0.0; *c as usize + 1];
                m[*c as usize] = 1.0;
                (m, 0.0)
            }
            OccupancyKind::Custom { pmf } => {
                let kmax = pmf.last().map_or(0, |p| p.0) as usize;
                let mut m = vec![0.0; kmax + 1];
                for &(k, p) in pmf {
                    m[k as usize] = p;
                }
                (m, 0.0)
            }
            _ => {
                let mut masses = Vec::new();
                let mut acc = 0.0;
                let mut k = 0u64;
                loop {
                    let p = self.pmf(k);
                    masses.push(p);
                    acc += p;
                    // once past the mode the tail is dominated by a geometric series
                    let tail = 1.0 - acc;
                    if (k as f64) > self.rho0 && tail_bound(self, k) <= tail_tol {
                        return (masses, tail.max(0.0));
                    }
                    k += 1;
                }
            }
        }
    }

    /// Draws one occupation value.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match &self.kind {
            OccupancyKind::Poisson { rho } => Poisson::new(*rho).expect("positive mean").sample(rng) as u64,
            OccupancyKind::Deterministic { c } => *c,
            OccupancyKind::Geometric { rho } => {
                Geometric::new(1.0 / (1.0 + rho)).expect("valid success probability").sample(rng)
            }
            OccupancyKind::Custom { pmf } => sample_pmf(pmf, rng),
        }
    }

    /// Per-site sampler with distribution constants set up once.
    pub fn sampler(&self) -> SiteSampler {
        match &self.kind {
            OccupancyKind::Poisson { rho } => SiteSampler::Poisson(Poisson::new(*rho).expect("positive mean")),
            OccupancyKind::Deterministic { c } => SiteSampler::Constant(*c),
            OccupancyKind::Geometric { rho } => {
                SiteSampler::Geometric(Geometric::new(1.0 / (1.0 + rho)).expect("valid success probability"))
            }
            OccupancyKind::Custom { pmf } => SiteSampler::Custom(pmf.clone()),
        }
    }

    /// The law tilted by `e^{θk}`, as a model of the same family when one
    /// exists.
    pub fn tilted(&self, theta: f64) -> Result<OccupancyModel, OccupancyError> {
        self.check_theta(theta)?;
        match &self.kind {
            OccupancyKind::Poisson { rho } => Self::poisson(rho * theta.exp()),
            OccupancyKind::Deterministic { c } => Ok(Self::deterministic(*c)),
            OccupancyKind::Geometric { .. } => Self::geometric(self.gamma_prime(theta)?),
            OccupancyKind::Custom { pmf } => {
                let lse = custom_log_mgf(pmf, theta);
                let tilted: Vec<(u64, f64)> =
                    pmf.iter().map(|&(k, p)| (k, (p.ln() + theta * k as f64 - lse).exp())).collect();
                Self::custom(&tilted)
            }
        }
    }
}

fn check_mean(rho: f64) -> Result<(), OccupancyError> {
    if rho.is_finite() && rho > 0.0 {
        Ok(())
    } else {
        Err(OccupancyError::InvalidMean(rho))
    }
}

/// Bound on `P(η > k)` for the unbounded laws, for `k` above the mean.
fn tail_bound(model: &OccupancyModel, k: u64) -> f64 {
    match model.kind {
        OccupancyKind::Poisson { rho } => {
            // P(η > k) ≤ p(k+1) / (1 − ρ/(k+2))
            let next = model.pmf(k + 1);
            next / (1.0 - rho / (k as f64 + 2.0))
        }
        OccupancyKind::Geometric { rho } => (rho / (1.0 + rho)).powi(k as i32 + 1),
        _ => 0.0,
    }
}

fn custom_log_mgf(pmf: &[(u64, f64)], theta: f64) -> f64 {
    let terms: Vec<f64> = pmf.iter().map(|&(k, p)| p.ln() + theta * k as f64).collect();
    log_sum_exp(&terms)
}

/// Mean and variance of the tilted custom law.
fn tilted_moments(pmf: &[(u64, f64)], theta: f64) -> (f64, f64) {
    let lse = custom_log_mgf(pmf, theta);
    let weights: Vec<(f64, f64)> =
        pmf.iter().map(|&(k, p)| (k as f64, (p.ln() + theta * k as f64 - lse).exp())).collect();
    let mean: f64 = weights.iter().map(|&(k, w)| k * w).sum();
    let var: f64 = weights.iter().map(|&(k, w)| (k - mean) * (k - mean) * w).sum();
    (mean, var.max(0.0))
}

fn custom_gamma_star(pmf: &[(u64, f64)], x: f64) -> f64 {
    let (kmin, pmin) = pmf[0];
    let (kmax, pmax) = pmf[pmf.len() - 1];
    let (lo, hi) = (kmin as f64, kmax as f64);
    if x < lo || x > hi {
        return f64::INFINITY;
    }
    if x == lo {
        return -pmin.ln();
    }
    if x == hi {
        return -pmax.ln();
    }
    let dual = |lambda: f64| lambda * x - custom_log_mgf(pmf, lambda);
    // bracket the tilt, then solve γ′(λ) = x
    let mut a = -1.0;
    let mut b = 1.0;
    while tilted_moments(pmf, a).0 > x && a > -700.0 {
        a *= 2.0;
    }
    while tilted_moments(pmf, b).0 < x && b < 700.0 {
        b *= 2.0;
    }
    let (ma, mb) = (tilted_moments(pmf, a).0, tilted_moments(pmf, b).0);
    if ma > x {
        return dual(a).max(dual(a * 1.0001));
    }
    if mb < x {
        return dual(b).max(dual(b * 1.0001));
    }
    match solve_increasing(
        |l| Ok::<_, std::convert::Infallible>(tilted_moments(pmf, l)),
        x,
        a,
        b,
        0.0,
        1e-13 * (1.0 + x),
    ) {
        Ok(root) => dual(root.x),
        // residual stalls only in the extreme tilts, where λx − γ(λ) is flat
        Err(_) => (0..=64).map(|i| dual(a + (b - a) * i as f64 / 64.0)).fold(f64::NEG_INFINITY, f64::max),
    }
}

fn sample_pmf<R: Rng + ?Sized>(pmf: &[(u64, f64)], rng: &mut R) -> u64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(k, p) in pmf {
        acc += p;
        if u < acc {
            return k;
        }
    }
    pmf[pmf.len() - 1].0
}

/// Prepared per-site sampler.
#[derive(Debug, Clone)]
pub enum SiteSampler {
    Poisson(Poisson<f64>),
    Constant(u64),
    Geometric(Geometric),
    Custom(Vec<(u64, f64)>),
}

impl SiteSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            SiteSampler::Poisson(d) => d.sample(rng) as u64,
            SiteSampler::Constant(c) => *c,
            SiteSampler::Geometric(d) => d.sample(rng),
            SiteSampler::Custom(pmf) => sample_pmf(pmf, rng),
        }
    }
}

/// I.i.d. occupation values on `site_count` consecutive sites.
pub fn sample_profile<R: Rng + ?Sized>(
    model: &OccupancyModel,
    site_min: i64,
    site_count: usize,
    rng: &mut R,
) -> OccupancyProfile {
    let sampler = model.sampler();
    OccupancyProfile { site_min, counts: (0..site_count).map(|_| sampler.sample(rng)).collect() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn models() -> Vec<OccupancyModel> {
        vec![
            OccupancyModel::poisson(0.5).unwrap(),
            OccupancyModel::poisson(2.0).unwrap(),
            OccupancyModel::deterministic(1),
            OccupancyModel::deterministic(3),
            OccupancyModel::custom(&[(0, 0.5), (2, 0.5)]).unwrap(),
            OccupancyModel::custom(&[(0, 0.2), (1, 0.3), (5, 0.5)]).unwrap(),
        ]
    }

    #[test]
    fn moments_match_the_laws() {
        for m in models() {
            let (table, tail) = m.pmf_table(1e-16);
            let mean: f64 = table.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
            let var: f64 = table.iter().enumerate().map(|(k, p)| (k as f64 - mean).powi(2) * p).sum();
            assert!(tail < 1e-15);
            assert!((mean - m.rho0()).abs() < 1e-12, "{m:?}");
            assert!((var - m.v0()).abs() < 1e-12, "{m:?}");
        }
        let g = OccupancyModel::geometric(1.5).unwrap();
        assert_eq!((g.rho0(), g.v0()), (1.5, 1.5 * 2.5));
        let (table, _) = g.pmf_table(1e-18);
        let mean: f64 = table.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        assert!((mean - 1.5).abs() < 1e-12);
    }

    #[test]
    fn gamma_values() {
        for m in models() {
            assert_eq!(m.gamma(0.0).unwrap(), 0.0);
            assert!((m.gamma_prime(0.0).unwrap() - m.rho0()).abs() < 1e-12);
            assert!((m.gamma_second(0.0).unwrap() - m.v0()).abs() < 1e-12);
        }
        let p = OccupancyModel::poisson(2.0).unwrap();
        assert!((p.gamma(0.7).unwrap() - 2.0 * (0.7f64.exp() - 1.0)).abs() < 1e-14);
        assert!((p.gamma_prime(0.7).unwrap() - 2.0 * 0.7f64.exp()).abs() < 1e-14);
        let d = OccupancyModel::deterministic(1);
        assert_eq!(d.gamma(1.3).unwrap(), 1.3);
        assert_eq!(d.gamma_prime(-4.0).unwrap(), 1.0);
    }

    #[test]
    fn geometric_mgf_radius_is_enforced() {
        let g = OccupancyModel::geometric(1.0).unwrap();
        let radius = 2f64.ln();
        assert!((g.mgf_radius() - radius).abs() < 1e-15);
        assert!(g.gamma(0.5).is_ok());
        assert!(matches!(g.gamma(0.8), Err(OccupancyError::MgfDiverges { .. })));
        assert!(!g.has_entire_mgf());
        // direct series check
        let direct: f64 = (0..400).map(|k| g.pmf(k) * (0.3 * k as f64).exp()).sum();
        assert!((g.gamma(0.3).unwrap() - direct.ln()).abs() < 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for m in models().into_iter().chain([OccupancyModel::geometric(0.8).unwrap()]) {
            for i in 0..=24 {
                let theta = -3.0 + 0.25 * i as f64;
                if theta + 1e-5 >= m.mgf_radius() {
                    continue;
                }
                let h = 1e-6;
                let fd = (m.gamma(theta + h).unwrap() - m.gamma(theta - h).unwrap()) / (2.0 * h);
                let gp = m.gamma_prime(theta).unwrap();
                assert!((fd - gp).abs() <= 1e-6 * gp.abs().max(1e-3), "{m:?} θ={theta}: {fd} vs {gp}");
                let fd2 = (m.gamma_prime(theta + h).unwrap() - m.gamma_prime(theta - h).unwrap()) / (2.0 * h);
                let g2 = m.gamma_second(theta).unwrap();
                assert!((fd2 - g2).abs() <= 1e-5 * g2.abs().max(1e-3), "{m:?} θ={theta}");
            }
        }
    }

    #[test]
    fn gamma_star_against_grid_search() {
        let p = OccupancyModel::poisson(1.5).unwrap();
        for &x in &[0.1, 0.5, 1.5, 3.0, 7.0] {
            let grid = (0..=600_000)
                .map(|i| {
                    let l = -30.0 + 60.0 * i as f64 / 600_000.0;
                    l * x - p.gamma(l).unwrap()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            let closed = x * (x / 1.5f64).ln() - x + 1.5;
            assert!((p.gamma_star(x) - closed).abs() < 1e-12);
            assert!((grid - closed).abs() < 1e-8, "x={x}");
        }
        assert_eq!(p.gamma_star(0.0), 1.5);
        assert_eq!(p.gamma_star(1.5), 0.0);
        let d = OccupancyModel::deterministic(1);
        assert_eq!(d.gamma_star(0.5), f64::INFINITY);
        assert_eq!(d.gamma_star(1.0), 0.0);
    }

    #[test]
    fn custom_gamma_star_boundaries_and_interior() {
        let c = OccupancyModel::custom(&[(0, 0.5), (2, 0.5)]).unwrap();
        // symmetric two-point law: γ*(x) = relative entropy of Bernoulli(x/2) vs Bernoulli(1/2)
        for &x in &[0.1f64, 0.7, 1.0, 1.6, 1.99] {
            let a = x / 2.0;
            let kl = a * (2.0 * a).ln() + (1.0 - a) * (2.0 * (1.0 - a)).ln();
            assert!((c.gamma_star(x) - kl).abs() < 1e-10, "x={x}");
        }
        assert!((c.gamma_star(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((c.gamma_star(2.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(c.gamma_star(2.5), f64::INFINITY);
        let g = OccupancyModel::geometric(1.0).unwrap();
        assert!(g.gamma_star(1.0).abs() < 1e-14);
        assert!((g.gamma_star(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn sampling_matches_laws() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = sample_profile(&OccupancyModel::deterministic(1), -5, 50, &mut rng);
        assert!(d.counts.iter().all(|&c| c == 1));
        assert_eq!(d.site_min, -5);

        let n = 100_000;
        let p = sample_profile(&OccupancyModel::poisson(2.0).unwrap(), 0, n, &mut rng);
        let mean = p.total() as f64 / n as f64;
        assert!((mean - 2.0).abs() < 4.0 * (2.0 / n as f64).sqrt());

        let c = sample_profile(&OccupancyModel::custom(&[(0, 0.5), (3, 0.5)]).unwrap(), 0, n, &mut rng);
        let threes = c.counts.iter().filter(|&&k| k == 3).count() as f64 / n as f64;
        assert!((threes - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
        assert!(c.counts.iter().all(|&k| k == 0 || k == 3));

        let g = OccupancyModel::geometric(1.5).unwrap();
        let s = sample_profile(&g, 0, n, &mut rng);
        let mean = s.total() as f64 / n as f64;
        assert!((mean - 1.5).abs() < 4.0 * (g.v0() / n as f64).sqrt());
    }

    #[test]
    fn tilted_laws_have_tilted_means() {
        for m in models() {
            for &theta in &[-1.0, 0.4, 2.0] {
                let t = m.tilted(theta).unwrap();
                assert!((t.rho0() - m.gamma_prime(theta).unwrap()).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn rejects_invalid_laws() {
        assert_eq!(OccupancyModel::poisson(0.0), Err(OccupancyError::InvalidMean(0.0)));
        assert_eq!(OccupancyModel::custom(&[]), Err(OccupancyError::EmptyPmf));
        assert_eq!(OccupancyModel::custom(&[(1, 0.0)]), Err(OccupancyError::ZeroTotalMass));
        assert!(matches!(OccupancyModel::custom(&[(1, -0.5)]), Err(OccupancyError::InvalidProbability { .. })));
        assert_eq!(OccupancyModel::custom(&[(1, 0.5), (1, 0.5)]), Err(OccupancyError::DuplicateValue(1)));
    }

    fn any_model() -> impl Strategy<Value = OccupancyModel> {
        prop_oneof![
            (0.05f64..5.0).prop_map(|r| OccupancyModel::poisson(r).unwrap()),
            (0u64..5).prop_map(OccupancyModel::deterministic),
            proptest::collection::vec((0u64..8, 0.01f64..1.0), 1..5)
                .prop_filter_map("distinct values", |v| { OccupancyModel::custom(&v).ok() }),
        ]
    }

    proptest! {
        #[test]
        fn gamma_is_convex(m in any_model(), t1 in -3.0f64..3.0, t2 in -3.0f64..3.0) {
            for &l in &[0.25, 0.5, 0.75] {
                let mid = m.gamma(l * t1 + (1.0 - l) * t2).unwrap();
                let chord = l * m.gamma(t1).unwrap() + (1.0 - l) * m.gamma(t2).unwrap();
                prop_assert!(mid <= chord + 1e-10);
            }
        }

        #[test]
        fn fenchel_young(m in any_model(), theta in -3.0f64..3.0, x in 0.0f64..8.0) {
            let g = m.gamma(theta).unwrap();
            prop_assert!(g + m.gamma_star(x) >= theta * x - 1e-10);
            let xt = m.gamma_prime(theta).unwrap();
            let gap = g + m.gamma_star(xt) - theta * xt;
            prop_assert!(gap.abs() <= 1e-8 * (1.0 + g.abs()), "gap {}", gap);
        }
    }
}
