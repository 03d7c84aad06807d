//! Jump kernels of the continuous-time random walk.
//!
//! A walk jumps at rate one; each jump is an independent draw from the
//! kernel. The displacement over a time `τ` is therefore a compound Poisson
//! sum with a `Poisson(τ)` number of jumps. The module provides the
//! validated kernel with its drift and second moment, two independent
//! samplers for the displacement, the exact displacement pmf by repeated
//! convolution, and Chernoff bounds on its centered tails.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Largest admissible jump length in lattice sites.
pub const MAX_JUMP: i64 = 1 << 20;

/// θ-range used when evaluating moment generating functions numerically.
/// Finitely supported kernels have an infinite MGF radius; the cap keeps
/// `e^{θx}` representable.
pub const MGF_THETA_CAP: f64 = 50.0;

const CHERNOFF_GRID: usize = 256;
const CHERNOFF_THETA_MIN: f64 = 1e-4;

/// Default Poisson tail left out of [`walk_pmf`].
pub const DEFAULT_MASS_TOL: f64 = 1e-12;

/// Upper bound on `jump count × support width` work in [`walk_pmf`].
const PMF_WORK_CAP: f64 = 4e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel has no entries")]
    Empty,
    #[error("negative weight {weight} at offset {offset}")]
    NegativeWeight { offset: i64, weight: f64 },
    #[error("non-finite weight at offset {offset}")]
    NonFiniteWeight { offset: i64 },
    #[error("kernel weights sum to zero")]
    ZeroTotalMass,
    #[error("offset {offset} exceeds the supported jump range ±{MAX_JUMP}")]
    UnboundedSupport { offset: i64 },
    #[error("offset {offset} listed more than once")]
    DuplicateOffset { offset: i64 },
    #[error("sample times must be ascending and nonnegative")]
    UnsortedTimes,
    #[error("invalid elapsed time {0}")]
    InvalidTime(f64),
    #[error("mass tolerance {0} outside (0, 1e-6)")]
    InvalidMassTol(f64),
    #[error("pmf truncation needs {jumps} jumps over width {width}, beyond the work budget")]
    TruncationBudgetExceeded { jumps: usize, width: usize },
}

/// A normalized, finitely supported jump distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedKernel {
    probs: Vec<(i64, f64)>,
    v: f64,
    kappa2: f64,
    mgf_radius: f64,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

/// Validates raw weights and normalizes them into a kernel.
pub fn validate_kernel(raw: &BTreeMap<i64, f64>) -> Result<ValidatedKernel, KernelError> {
    if raw.is_empty() {
        return Err(KernelError::Empty);
    }
    for (&offset, &weight) in raw {
        if !weight.is_finite() {
            return Err(KernelError::NonFiniteWeight { offset });
        }
        if weight < 0.0 {
            return Err(KernelError::NegativeWeight { offset, weight });
        }
        if offset.abs() > MAX_JUMP {
            return Err(KernelError::UnboundedSupport { offset });
        }
    }
    let total: f64 = raw.values().sum();
    if total <= 0.0 {
        return Err(KernelError::ZeroTotalMass);
    }
    let probs: Vec<(i64, f64)> = raw.iter().filter(|(_, &w)| w > 0.0).map(|(&x, &w)| (x, w / total)).collect();
    Ok(ValidatedKernel::from_normalized(probs))
}

impl ValidatedKernel {
    /// Builds a kernel from an (offset, weight) list as it appears in
    /// configuration files. Repeated offsets are rejected.
    pub fn from_pairs(pairs: &[(i64, f64)]) -> Result<Self, KernelError> {
        let mut raw = BTreeMap::new();
        for &(x, w) in pairs {
            if raw.insert(x, w).is_some() {
                return Err(KernelError::DuplicateOffset { offset: x });
            }
        }
        validate_kernel(&raw)
    }

    fn from_normalized(probs: Vec<(i64, f64)>) -> Self {
        let v = probs.iter().map(|&(x, p)| x as f64 * p).sum();
        let kappa2 = probs.iter().map(|&(x, p)| (x as f64) * (x as f64) * p).sum();
        let cumulative = cumulative_of(&probs);
        ValidatedKernel { probs, v, kappa2, mgf_radius: f64::INFINITY, cumulative }
    }

    /// Restores derived lookup tables after deserialization.
    pub fn revalidated(self) -> Result<Self, KernelError> {
        let raw = self.probs.iter().copied().collect();
        validate_kernel(&raw)
    }

    pub fn probs(&self) -> &[(i64, f64)] {
        &self.probs
    }

    /// Mean jump per unit time.
    pub fn drift(&self) -> f64 {
        self.v
    }

    /// `Σ x² p(x)`.
    pub fn kappa2(&self) -> f64 {
        self.kappa2
    }

    pub fn mgf_radius(&self) -> f64 {
        self.mgf_radius
    }

    pub fn min_jump(&self) -> i64 {
        self.probs.first().map_or(0, |p| p.0)
    }

    pub fn max_jump(&self) -> i64 {
        self.probs.last().map_or(0, |p| p.0)
    }

    /// `log E exp(θ (X(τ) − vτ))` for the walk displacement over time `τ`.
    pub fn centered_log_mgf(&self, theta: f64, tau: f64) -> f64 {
        let m: f64 = self.probs.iter().map(|&(x, p)| p * (theta * x as f64).exp()).sum();
        tau * (m - 1.0) - theta * self.v * tau
    }

    /// Draws one jump.
    pub fn sample_jump<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let u: f64 = rng.random();
        let idx = self.cumulative.partition_point(|&c| c <= u);
        self.probs[idx.min(self.probs.len() - 1)].0
    }

    /// Displacement after time `tau`: a `Poisson(tau)` number of i.i.d.
    /// jumps, drawn through Poisson splitting (independent `Poisson(τp(x))`
    /// counts per jump value).
    pub fn sample_displacement<R: Rng + ?Sized>(&self, tau: f64, rng: &mut R) -> i64 {
        debug_assert!(tau.is_finite() && tau >= 0.0);
        if tau <= 0.0 {
            return 0;
        }
        self.probs.iter().map(|&(x, p)| x * poisson_draw(tau * p, rng)).sum()
    }

    /// Positions at each of the ascending `times`, starting from the origin
    /// at time zero, with independent increments between consecutive times.
    pub fn sample_increments<R: Rng + ?Sized>(&self, times: &[f64], rng: &mut R) -> Result<Vec<i64>, KernelError> {
        check_times(times)?;
        let mut out = Vec::with_capacity(times.len());
        let mut pos = 0i64;
        let mut prev = 0.0;
        for &t in times {
            pos += self.sample_displacement(t - prev, rng);
            out.push(pos);
            prev = t;
        }
        Ok(out)
    }

    /// Event-driven reference sampler: exponential holding times of rate
    /// one, one kernel jump per event. Slower than
    /// [`sample_displacement`](Self::sample_displacement); kept as an
    /// independent oracle.
    pub fn gillespie_reference<R: Rng + ?Sized>(&self, tau: f64, rng: &mut R) -> i64 {
        let mut clock = 0.0;
        let mut pos = 0i64;
        loop {
            let u: f64 = rng.random();
            clock += -(1.0 - u).ln();
            if clock > tau {
                return pos;
            }
            pos += self.sample_jump(rng);
        }
    }
}

fn cumulative_of(probs: &[(i64, f64)]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = probs
        .iter()
        .map(|&(_, p)| {
            acc += p;
            acc
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    out
}

fn check_times(times: &[f64]) -> Result<(), KernelError> {
    let mut prev = 0.0;
    for &t in times {
        if !t.is_finite() || t < prev {
            return Err(KernelError::UnsortedTimes);
        }
        prev = t;
    }
    Ok(())
}

fn poisson_draw<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> i64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng) as i64
}

/// Precomputed Poisson-splitting sampler for a fixed sequence of time gaps.
/// Used by the particle simulator, where every particle walks over the same
/// time grid.
#[derive(Debug, Clone)]
pub struct IncrementSampler {
    gaps: Vec<Vec<(i64, Poisson<f64>)>>,
}

impl IncrementSampler {
    pub fn new(kernel: &ValidatedKernel, times: &[f64]) -> Result<Self, KernelError> {
        check_times(times)?;
        let mut prev = 0.0;
        let gaps = times
            .iter()
            .map(|&t| {
                let gap = t - prev;
                prev = t;
                kernel
                    .probs()
                    .iter()
                    .filter(|_| gap > 0.0)
                    .map(|&(x, p)| (x, Poisson::new(gap * p).expect("positive finite mean")))
                    .collect()
            })
            .collect();
        Ok(IncrementSampler { gaps })
    }

    /// Writes displacements from the origin at each grid time into `out`.
    pub fn fill<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [i64]) {
        let mut pos = 0i64;
        for (slot, gap) in out.iter_mut().zip(&self.gaps) {
            for (x, dist) in gap {
                pos += x * dist.sample(rng) as i64;
            }
            *slot = pos;
        }
    }

    pub fn len(&self) -> usize {
        self.gaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaps.is_empty()
    }
}

/// Exact distribution of the walk displacement at a fixed time, up to an
/// explicit truncation deficit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkPmf {
    pub offset_min: i64,
    pub masses: Vec<f64>,
    pub elapsed: f64,
    /// Probability mass of the discarded jump counts.
    pub deficit: f64,
}

impl WalkPmf {
    pub fn offset_max(&self) -> i64 {
        self.offset_min + self.masses.len() as i64 - 1
    }

    pub fn mass(&self, x: i64) -> f64 {
        if x < self.offset_min || x > self.offset_max() {
            return 0.0;
        }
        self.masses[(x - self.offset_min) as usize]
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Mean of the retained masses, renormalized by the retained total.
    pub fn mean(&self) -> f64 {
        let total = self.total_mass();
        self.masses.iter().enumerate().map(|(i, m)| (self.offset_min + i as i64) as f64 * m).sum::<f64>() / total
    }

    pub fn variance(&self) -> f64 {
        let total = self.total_mass();
        let mean = self.mean();
        self.masses
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let d = (self.offset_min + i as i64) as f64 - mean;
                d * d * m
            })
            .sum::<f64>()
            / total
    }

    /// Cumulative table: entry `i` is `P(X ≤ offset_min + i)`, accumulated
    /// from the retained masses.
    pub fn cdf_table(&self) -> CdfTable {
        let mut acc = 0.0;
        let lower = self
            .masses
            .iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect();
        // upper tails summed from the right keep small tail probabilities accurate
        let mut acc = 0.0;
        let mut upper: Vec<f64> = self
            .masses
            .iter()
            .rev()
            .map(|m| {
                let out = acc;
                acc += m;
                out
            })
            .collect();
        upper.reverse();
        CdfTable { offset_min: self.offset_min, lower, upper, deficit: self.deficit }
    }

    /// `P(|X − vτ| ≥ delta)` from the retained masses.
    pub fn centered_tail(&self, center: f64, delta: f64) -> f64 {
        self.masses
            .iter()
            .enumerate()
            .filter(|(i, _)| ((self.offset_min + *i as i64) as f64 - center).abs() >= delta)
            .map(|(_, m)| m)
            .sum()
    }
}

/// `P(X ≤ x)` and `P(X > x)` lookups for a [`WalkPmf`].
#[derive(Debug, Clone)]
pub struct CdfTable {
    offset_min: i64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    deficit: f64,
}

impl CdfTable {
    /// `P(X ≤ x)` from the retained masses.
    pub fn at_most(&self, x: i64) -> f64 {
        if x < self.offset_min {
            return 0.0;
        }
        let i = (x - self.offset_min) as usize;
        if i >= self.lower.len() {
            return *self.lower.last().unwrap_or(&1.0);
        }
        self.lower[i]
    }

    /// `P(X > x)` from the retained masses.
    pub fn above(&self, x: i64) -> f64 {
        if x < self.offset_min {
            return self.upper.first().copied().unwrap_or(0.0) + self.lower.first().copied().unwrap_or(0.0);
        }
        let i = (x - self.offset_min) as usize;
        if i >= self.upper.len() {
            return 0.0;
        }
        self.upper[i]
    }

    pub fn deficit(&self) -> f64 {
        self.deficit
    }
}

/// Exact displacement pmf at time `tau`: the kernel convolved `j` times,
/// weighted by `Poisson(tau)` probabilities, for `j` up to the first count
/// whose Poisson upper tail is below `mass_tol`.
pub fn walk_pmf(kernel: &ValidatedKernel, tau: f64, mass_tol: f64) -> Result<WalkPmf, KernelError> {
    if !tau.is_finite() || tau < 0.0 {
        return Err(KernelError::InvalidTime(tau));
    }
    if !(mass_tol > 0.0 && mass_tol < 1e-6) {
        return Err(KernelError::InvalidMassTol(mass_tol));
    }
    if tau == 0.0 {
        return Ok(WalkPmf { offset_min: 0, masses: vec![1.0], elapsed: 0.0, deficit: 0.0 });
    }
    let lo = kernel.min_jump().min(0);
    let hi = kernel.max_jump().max(0);
    let step_width = (hi - lo) as usize;
    let jumps_floor = tau.floor() as usize;
    if jumps_floor as f64 * (jumps_floor * step_width) as f64 * kernel.probs().len() as f64 > PMF_WORK_CAP {
        return Err(KernelError::TruncationBudgetExceeded { jumps: jumps_floor, width: jumps_floor * step_width + 1 });
    }
    let (jumps, deficit) = poisson_truncation(tau, mass_tol);
    let width = jumps * step_width + 1;
    if jumps as f64 * width as f64 * kernel.probs().len() as f64 > PMF_WORK_CAP {
        return Err(KernelError::TruncationBudgetExceeded { jumps, width });
    }

    // conv holds the j-fold convolution on support [j*min_jump, j*max_jump]
    let offset_min = jumps as i64 * lo;
    let mut masses = vec![0.0; width];
    let mut conv = vec![1.0f64];
    let mut conv_min = 0i64;
    let span = (kernel.max_jump() - kernel.min_jump()) as usize;
    let ln_tau = tau.ln();
    let mut ln_weight = -tau;
    for j in 0..=jumps {
        if j > 0 {
            ln_weight += ln_tau - (j as f64).ln();
            let mut next = vec![0.0; conv.len() + span];
            for (i, &c) in conv.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                for &(x, p) in kernel.probs() {
                    next[i + (x - kernel.min_jump()) as usize] += c * p;
                }
            }
            conv = next;
            conv_min += kernel.min_jump();
        }
        let w = ln_weight.exp();
        if w == 0.0 {
            continue;
        }
        let base = (conv_min - offset_min) as usize;
        for (i, &c) in conv.iter().enumerate() {
            masses[base + i] += w * c;
        }
    }
    // trim exact zeros at both ends
    let first = masses.iter().position(|&m| m > 0.0).unwrap_or(0);
    let last = masses.iter().rposition(|&m| m > 0.0).unwrap_or(0);
    let masses = masses[first..=last].to_vec();
    Ok(WalkPmf { offset_min: offset_min + first as i64, masses, elapsed: tau, deficit })
}

/// Smallest jump count `J` with `P(Poisson(tau) > J) < mass_tol`, and that
/// tail probability.
fn poisson_truncation(tau: f64, mass_tol: f64) -> (usize, f64) {
    let ln_tau = tau.ln();
    let tail = |j: usize| poisson_upper_tail(j, tau, ln_tau);
    // tail(lo) ≥ mass_tol always holds at the mode; grow the step until the bracket closes
    let mut lo = tau.floor() as usize;
    let mut step = tau.sqrt().ceil() as usize + 1;
    let mut hi = lo + step;
    while tail(hi) >= mass_tol {
        lo = hi;
        step *= 2;
        hi = lo + step;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if tail(mid) < mass_tol {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (hi, tail(hi))
}

/// `P(N > j)` for `N ~ Poisson(tau)`, summed term by term (valid for `j ≥ tau`).
fn poisson_upper_tail(j: usize, tau: f64, ln_tau: f64) -> f64 {
    let k0 = j + 1;
    let ln_term = -tau + k0 as f64 * ln_tau - ln_factorial(k0);
    let mut term = 1.0;
    let mut sum = 0.0;
    let mut k = k0;
    loop {
        sum += term;
        k += 1;
        term *= tau / k as f64;
        if term < 1e-17 * sum {
            break;
        }
    }
    (ln_term + sum.ln()).exp()
}

fn ln_factorial(k: usize) -> f64 {
    statrs::function::gamma::ln_gamma(k as f64 + 1.0)
}

/// Chernoff bound on `P(|X(τ) − vτ| ≥ delta)`, optimized separately for each
/// side over a log-spaced θ grid in `(0, MGF_THETA_CAP]`. Never exceeds 1.
pub fn chernoff_tail(kernel: &ValidatedKernel, tau: f64, delta: f64) -> f64 {
    if delta <= 0.0 || tau <= 0.0 {
        return if delta <= 0.0 { 1.0 } else { 0.0 };
    }
    let upper = chernoff_one_sided(kernel, tau, delta, 1.0);
    let lower = chernoff_one_sided(kernel, tau, delta, -1.0);
    (upper + lower).min(1.0)
}

/// `min_θ exp(−θ delta + log E e^{sign·θ(X−vτ)})`, capped at 1.
pub fn chernoff_one_sided(kernel: &ValidatedKernel, tau: f64, delta: f64, sign: f64) -> f64 {
    let best = theta_grid()
        .map(|theta| kernel.centered_log_mgf(sign * theta, tau) - theta * delta)
        .fold(f64::INFINITY, f64::min);
    best.min(0.0).exp()
}

/// Bound on `Σ_{d ≥ start} P(sign·(X(τ) − vτ) ≥ d + shift)` over integer `d`,
/// using one θ for the whole geometric series.
pub fn chernoff_series(kernel: &ValidatedKernel, tau: f64, start: f64, shift: f64, sign: f64) -> f64 {
    if tau <= 0.0 {
        return if start + shift <= 0.0 { f64::INFINITY } else { 0.0 };
    }
    theta_grid()
        .map(|theta| kernel.centered_log_mgf(sign * theta, tau) - theta * (start + shift) - (-(-theta).exp_m1()).ln())
        .fold(f64::INFINITY, f64::min)
        .exp()
}

fn theta_grid() -> impl Iterator<Item = f64> {
    let lo = CHERNOFF_THETA_MIN.ln();
    let hi = MGF_THETA_CAP.ln();
    (0..CHERNOFF_GRID).map(move |i| (lo + (hi - lo) * i as f64 / (CHERNOFF_GRID - 1) as f64).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn kernel(pairs: &[(i64, f64)]) -> ValidatedKernel {
        ValidatedKernel::from_pairs(pairs).unwrap()
    }

    #[test]
    fn drift_and_second_moment() {
        let k = kernel(&[(1, 1.0)]);
        assert_eq!((k.drift(), k.kappa2()), (1.0, 1.0));
        let k = kernel(&[(1, 0.7), (-1, 0.3)]);
        assert!((k.drift() - 0.4).abs() < 1e-15);
        assert!((k.kappa2() - 1.0).abs() < 1e-15);
        let k = kernel(&[(2, 0.5), (-1, 0.5)]);
        assert!((k.drift() - 0.5).abs() < 1e-15);
        assert!((k.kappa2() - 2.5).abs() < 1e-15);
        let k = kernel(&[(2, 3.0), (-1, 1.0)]);
        let total: f64 = k.probs().iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(k.mgf_radius(), f64::INFINITY);
    }

    #[test]
    fn stored_moments_match_recomputation_exactly() {
        let k = kernel(&[(3, 0.2), (-2, 0.5), (1, 0.3)]);
        let v: f64 = k.probs().iter().map(|&(x, p)| x as f64 * p).sum();
        let k2: f64 = k.probs().iter().map(|&(x, p)| (x * x) as f64 * p).sum();
        assert_eq!(v, k.drift());
        assert_eq!(k2, k.kappa2());
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(matches!(
            ValidatedKernel::from_pairs(&[(1, -0.1), (-1, 1.1)]),
            Err(KernelError::NegativeWeight { offset: 1, .. })
        ));
        assert_eq!(ValidatedKernel::from_pairs(&[(1, 0.0), (-1, 0.0)]), Err(KernelError::ZeroTotalMass));
        assert_eq!(ValidatedKernel::from_pairs(&[]), Err(KernelError::Empty));
        assert_eq!(
            ValidatedKernel::from_pairs(&[(MAX_JUMP + 1, 1.0)]),
            Err(KernelError::UnboundedSupport { offset: MAX_JUMP + 1 })
        );
        assert_eq!(ValidatedKernel::from_pairs(&[(1, 0.5), (1, 0.5)]), Err(KernelError::DuplicateOffset { offset: 1 }));
        assert!(matches!(ValidatedKernel::from_pairs(&[(1, f64::NAN)]), Err(KernelError::NonFiniteWeight { .. })));
    }

    #[test]
    fn zero_time_means_no_motion() {
        let k = kernel(&[(1, 0.7), (-1, 0.3)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(k.sample_displacement(0.0, &mut rng), 0);
            assert_eq!(k.gillespie_reference(0.0, &mut rng), 0);
        }
        assert_eq!(k.sample_increments(&[0.0], &mut rng).unwrap(), vec![0]);
        let p = walk_pmf(&k, 0.0, 1e-12).unwrap();
        assert_eq!((p.offset_min, p.masses.clone()), (0, vec![1.0]));
    }

    #[test]
    fn repeated_times_give_equal_positions() {
        let k = kernel(&[(1, 0.7), (-1, 0.3)]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let x = k.sample_increments(&[3.0, 3.0], &mut rng).unwrap();
            assert_eq!(x[0], x[1]);
        }
        assert_eq!(k.sample_increments(&[2.0, 1.0], &mut rng), Err(KernelError::UnsortedTimes));
        assert_eq!(k.sample_increments(&[-1.0], &mut rng), Err(KernelError::UnsortedTimes));
    }

    #[test]
    fn degenerate_kernel_gives_poisson_masses() {
        let k = kernel(&[(1, 1.0)]);
        let p = walk_pmf(&k, 2.0, 1e-12).unwrap();
        assert_eq!(p.offset_min, 0);
        let mut term = (-2.0f64).exp();
        for j in 0..20 {
            if j <= p.offset_max() {
                assert!((p.mass(j) - term).abs() < 1e-15, "j={j}");
            } else {
                assert!(term < 1e-12);
            }
            term *= 2.0 / (j + 1) as f64;
        }
        assert!(p.deficit < 1e-12);
    }

    #[test]
    fn pmf_moments_match_drift_and_kappa2() {
        let k = kernel(&[(1, 0.7), (-1, 0.3)]);
        let p = walk_pmf(&k, 50.0, 1e-12).unwrap();
        assert!((p.mean() - 20.0).abs() < 1e-8, "{}", p.mean());
        assert!((p.variance() - 50.0).abs() < 1e-7);
        assert!(p.deficit <= 1e-12);
        assert!((p.total_mass() + p.deficit - 1.0).abs() < 1e-12);
        let k = kernel(&[(2, 0.5), (-1, 0.5)]);
        for &tau in &[1.0, 10.0, 100.0] {
            let p = walk_pmf(&k, tau, 1e-12).unwrap();
            assert!((p.mean() - 0.5 * tau).abs() < 10.0 * 1e-12 * tau.max(1.0) * 100.0);
            assert!((p.variance() - (2.5 - 0.25) * 0.0 - 2.5 * tau).abs() < 1e-8 * tau);
        }
    }

    #[test]
    fn pmf_rejects_bad_tolerance() {
        let k = kernel(&[(1, 1.0)]);
        assert_eq!(walk_pmf(&k, 1.0, 0.0), Err(KernelError::InvalidMassTol(0.0)));
        assert_eq!(walk_pmf(&k, 1.0, 1e-3), Err(KernelError::InvalidMassTol(1e-3)));
        assert!(matches!(walk_pmf(&k, 1e9, 1e-12), Err(KernelError::TruncationBudgetExceeded { .. })));
    }

    #[test]
    fn chernoff_bounds_are_valid_and_monotone() {
        let k = kernel(&[(1, 1.0)]);
        assert_eq!(chernoff_tail(&k, 100.0, 0.0), 1.0);
        let p = walk_pmf(&k, 100.0, 1e-12).unwrap();
        let exact = p.centered_tail(100.0, 60.0);
        let bound = chernoff_tail(&k, 100.0, 60.0);
        assert!(exact <= bound && bound <= 0.01, "exact={exact} bound={bound}");

        for pairs in [&[(1, 0.7), (-1, 0.3)][..], &[(2, 0.5), (-1, 0.5)][..], &[(1, 1.0)][..]] {
            let k = kernel(pairs);
            for &tau in &[1.0, 10.0, 100.0] {
                let p = walk_pmf(&k, tau, 1e-12).unwrap();
                let center = k.drift() * tau;
                let mut prev = 1.0;
                for d in 0..80 {
                    let b = chernoff_tail(&k, tau, d as f64);
                    assert!(b <= prev + 1e-15);
                    assert!(b <= 1.0);
                    assert!(p.centered_tail(center, d as f64) <= b + 1e-12, "tau={tau} d={d}");
                    prev = b;
                }
            }
        }
    }

    #[test]
    fn series_bound_dominates_summed_tails() {
        let k = kernel(&[(1, 0.7), (-1, 0.3)]);
        let tau = 100.0;
        let p = walk_pmf(&k, tau, 1e-12).unwrap();
        let center = k.drift() * tau;
        for &start in &[5.0, 20.0, 40.0] {
            let exact_upper: f64 = (0..400)
                .map(|i| {
                    let d = start + i as f64;
                    p.masses
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| (p.offset_min + *j as i64) as f64 - center >= d)
                        .map(|(_, m)| m)
                        .sum::<f64>()
                })
                .sum();
            let bound = chernoff_series(&k, tau, start, 0.0, 1.0);
            assert!(exact_upper <= bound, "{exact_upper} > {bound}");
        }
    }

    #[test]
    fn poisson_truncation_is_minimal() {
        for &tau in &[0.5, 2.0, 50.0, 400.0] {
            let (j, tail) = poisson_truncation(tau, 1e-12);
            assert!(tail < 1e-12);
            assert!(poisson_upper_tail(j - 1, tau, tau.ln()) >= 1e-12);
        }
    }

    #[test]
    fn cdf_table_lookups() {
        let k = kernel(&[(1, 0.7), (-1, 0.3)]);
        let p = walk_pmf(&k, 10.0, 1e-12).unwrap();
        let t = p.cdf_table();
        for x in -30..40 {
            let below: f64 = (p.offset_min..=x).map(|y| p.mass(y)).sum();
            assert!((t.at_most(x) - below).abs() < 1e-14);
            assert!((t.at_most(x) + t.above(x) - p.total_mass()).abs() < 1e-14);
        }
    }
}
