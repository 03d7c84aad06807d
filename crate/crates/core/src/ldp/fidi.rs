//! Joint rate function of `n^{-1/2}(Y_n(t_1), …, Y_n(t_k))` for Poisson
//! occupations.
//!
//! Each particle contributes a 0/1 pattern `u` recording at which of the
//! times it sits on the far side of the characteristic. Particles from the
//! right with pattern `u` and particles from the left with pattern `u` form
//! independent Poisson counts with scaled means `α_u` and `β_u`, and the
//! current vector is `Σ_u (N¹_u − N²_u)·u`. The rate is the Legendre dual of
//! `λ ↦ Σ_u [α_u(e^{⟨λ,u⟩} − 1) + β_u(e^{−⟨λ,u⟩} − 1)]`.

use serde::{Deserialize, Serialize};

use super::LdpError;
use crate::quad::{integrate, integrate_pieces};
use crate::special::{bvn_cdf, normal_cdf, normal_pdf, std_normal_cdf};

pub const MAX_FIDI_TIMES: usize = 3;

/// Tilts of norm at least this are treated as a divergent supremum.
pub const FIDI_LAMBDA_CAP: f64 = 50.0;

const TAIL_SDS: f64 = 12.0;
const RATE_TOL: f64 = 1e-11;
const INNER_TOL: f64 = 1e-13;
const GRADIENT_TOL: f64 = 1e-11;
const MAX_NEWTON: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidiSpec {
    pub times: Vec<f64>,
    pub rho: f64,
    pub kappa2: f64,
    /// Nonzero 0/1 patterns, `patterns[i][j]` for time `j`.
    pub patterns: Vec<Vec<u8>>,
    pub alpha_rates: Vec<f64>,
    pub beta_rates: Vec<f64>,
}

impl FidiSpec {
    /// Times must be positive and non-decreasing; repeated times are
    /// allowed and make the corresponding coordinates identical.
    pub fn new(times: &[f64], rho: f64, kappa2: f64) -> Result<Self, LdpError> {
        let k = times.len();
        if k == 0 || k > MAX_FIDI_TIMES {
            return Err(LdpError::InvalidParameters(format!("need 1 to {MAX_FIDI_TIMES} times, got {k}")));
        }
        if times.iter().any(|&t| !(t > 0.0 && t.is_finite())) || times.windows(2).any(|w| w[1] < w[0]) {
            return Err(LdpError::InvalidParameters("times must be positive and non-decreasing".into()));
        }
        if !(rho > 0.0 && rho.is_finite() && kappa2 > 0.0 && kappa2.is_finite()) {
            return Err(LdpError::InvalidParameters("rho and kappa2 must be positive".into()));
        }
        let s: Vec<f64> = times.iter().map(|t| kappa2 * t).collect();
        let patterns: Vec<Vec<u8>> =
            (1u32..(1 << k)).map(|bits| (0..k).map(|j| ((bits >> j) & 1) as u8).collect()).collect();
        let x_max = TAIL_SDS * s[k - 1].sqrt();
        let mut alpha_rates = Vec::with_capacity(patterns.len());
        for u in &patterns {
            let q = integrate(|x| pattern_probability(&s, u, x), 0.0, x_max, RATE_TOL)?;
            alpha_rates.push(rho * q.value.max(0.0));
        }
        // B ↦ −B maps the left-side events onto the right-side ones
        let beta_rates = alpha_rates.clone();
        Ok(FidiSpec { times: times.to_vec(), rho, kappa2, patterns, alpha_rates, beta_rates })
    }

    pub fn k(&self) -> usize {
        self.times.len()
    }

    /// `Σ_u [α_u(e^{⟨λ,u⟩} − 1) + β_u(e^{−⟨λ,u⟩} − 1)]`.
    pub fn log_mgf(&self, lambda: &[f64]) -> f64 {
        self.terms(lambda).0
    }

    /// Value, gradient and Hessian of the log-mgf.
    fn terms(&self, lambda: &[f64]) -> (f64, Vec<f64>, Vec<Vec<f64>>) {
        let k = self.k();
        let mut value = 0.0;
        let mut grad = vec![0.0; k];
        let mut hess = vec![vec![0.0; k]; k];
        for ((u, &a), &b) in self.patterns.iter().zip(&self.alpha_rates).zip(&self.beta_rates) {
            let s: f64 = lambda.iter().zip(u).map(|(l, &ui)| l * ui as f64).sum();
            let (ep, em) = (s.exp(), (-s).exp());
            value += a * s.exp_m1() + b * (-s).exp_m1();
            let d1 = a * ep - b * em;
            let d2 = a * ep + b * em;
            for i in 0..k {
                if u[i] == 0 {
                    continue;
                }
                grad[i] += d1;
                for j in 0..k {
                    if u[j] == 1 {
                        hess[i][j] += d2;
                    }
                }
            }
        }
        (value, grad, hess)
    }
}

/// `P(∩_j C_j)` with `C_j = {B(s_j) ≤ −x}` where `u_j = 1` and its
/// complement where `u_j = 0`.
fn pattern_probability(s: &[f64], u: &[u8], x: f64) -> f64 {
    match s.len() {
        1 => normal_cdf(s[0], -x),
        2 => {
            let (a, b) = (-x / s[0].sqrt(), -x / s[1].sqrt());
            let both = bvn_cdf(a, b, (s[0] / s[1]).sqrt());
            match (u[0], u[1]) {
                (1, 1) => both,
                (1, 0) => (std_normal_cdf(a) - both).max(0.0),
                (0, 1) => (std_normal_cdf(b) - both).max(0.0),
                _ => 0.0,
            }
        }
        _ => three_time_probability(s, u, x),
    }
}

/// Conditions on `B(s_2) = b`: the bridge value at `s_1` and the forward
/// increment to `s_3` are then independent Gaussians.
fn three_time_probability(s: &[f64], u: &[u8], x: f64) -> f64 {
    let (s1, s2, s3) = (s[0], s[1], s[2]);
    let side = |below: bool, u: u8| if u == 1 { below } else { !below };
    let cond = |mean: f64, var: f64, u: u8| {
        let below = if var > 0.0 {
            normal_cdf(var, -x - mean)
        } else if mean <= -x {
            1.0
        } else {
            0.0
        };
        if u == 1 {
            below
        } else {
            1.0 - below
        }
    };
    let bridge_var = s1 * (s2 - s1) / s2;
    let forward_var = s3 - s2;
    let integrand = |b: f64| {
        if !side(b <= -x, u[1]) {
            return 0.0;
        }
        normal_pdf(s2, b) * cond(b * s1 / s2, bridge_var, u[0]) * cond(b, forward_var, u[2])
    };
    let sd = s2.sqrt();
    let (lo, hi) = (-TAIL_SDS * sd, TAIL_SDS * sd);
    let cut = (-x).clamp(lo, hi);
    let mut breaks = vec![lo, cut, hi];
    // the bridge indicator jumps where its mean crosses −x, if degenerate
    if bridge_var == 0.0 {
        breaks.push((-x * s2 / s1).clamp(lo, hi));
    }
    breaks.sort_by(f64::total_cmp);
    integrate_pieces(integrand, &breaks, INNER_TOL).map(|q| q.value.clamp(0.0, 1.0)).unwrap_or(f64::NAN)
}

/// Solves `A d = g` for a small symmetric positive definite `A`.
fn spd_solve(a: &[Vec<f64>], g: &[f64]) -> Option<Vec<f64>> {
    let k = g.len();
    let mut l = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = a[i][j] - (0..j).map(|m| l[i][m] * l[j][m]).sum::<f64>();
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; k];
    for i in 0..k {
        y[i] = (g[i] - (0..i).map(|m| l[i][m] * y[m]).sum::<f64>()) / l[i][i];
    }
    let mut d = vec![0.0; k];
    for i in (0..k).rev() {
        d[i] = (y[i] - (i + 1..k).map(|m| l[m][i] * d[m]).sum::<f64>()) / l[i][i];
    }
    Some(d)
}

/// `sup_λ {⟨λ, x⟩ − Λ_k(λ)}` by Levenberg–Marquardt damped Newton ascent.
/// Returns `+∞` when the maximizing sequence leaves the ball of radius
/// [`FIDI_LAMBDA_CAP`].
pub fn fidi_rate(spec: &FidiSpec, x: &[f64]) -> Result<f64, LdpError> {
    let k = spec.k();
    if x.len() != k {
        return Err(LdpError::InvalidParameters(format!("x has length {}, expected {k}", x.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LdpError::InvalidParameters("x must be finite".into()));
    }
    if x.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let objective = |l: &[f64]| l.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - spec.log_mgf(l);
    let mut lambda = vec![0.0; k];
    let mut value = 0.0;
    let mut mu = 1e-3;
    for _ in 0..MAX_NEWTON {
        let (_, g, h) = spec.terms(&lambda);
        let grad: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - b).collect();
        let gnorm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm <= GRADIENT_TOL * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            return Ok(value);
        }
        loop {
            let damped: Vec<Vec<f64>> =
                (0..k).map(|i| (0..k).map(|j| h[i][j] + if i == j { mu } else { 0.0 }).collect()).collect();
            let step = spd_solve(&damped, &grad).ok_or(LdpError::NewtonNonConvergent { gradient: gnorm })?;
            let trial: Vec<f64> = lambda.iter().zip(&step).map(|(a, b)| a + b).collect();
            let trial_value = objective(&trial);
            if trial_value.is_finite() && trial_value >= value {
                lambda = trial;
                value = trial_value;
                mu = (mu * 0.3).max(1e-12);
                break;
            }
            mu *= 10.0;
            if mu > 1e12 {
                return Err(LdpError::NewtonNonConvergent { gradient: gnorm });
            }
        }
        if lambda.iter().map(|v| v * v).sum::<f64>().sqrt() >= FIDI_LAMBDA_CAP {
            return Ok(f64::INFINITY);
        }
    }
    let (_, g, _) = spec.terms(&lambda);
    let gradient = x.iter().zip(&g).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Err(LdpError::NewtonNonConvergent { gradient })
}
