//! Large deviations of the current on the `√n` scale: the limiting log
//! moment generating function `Λ`, its Legendre dual computed two ways,
//! closed forms, importance sampling of finite-n tails, and the
//! finite-dimensional rate of the Poisson system.

mod fidi;
mod rate;
mod tilt;

pub use fidi::{fidi_rate, FidiSpec, FIDI_LAMBDA_CAP, MAX_FIDI_TIMES};
pub use rate::{
    alpha_of_x, lambda_fn, lambda_prime, lambda_second, poisson_rate_closed, rate_decomposed, rate_dual, rate_table,
    write_rate_table, DecomposedRate, RateRow,
};
pub use tilt::{plain_tail_estimate, tilted_tail_estimate, TailEstimate, MIN_EFFECTIVE_SAMPLES};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::current::SimError;
use crate::occupancy::{OccupancyError, OccupancyModel};
use crate::quad::QuadError;
use crate::roots::RootError;
use crate::special::{normal_cdf, normal_sf, psi};

/// Largest tilt `|λ|` the analytic routines accept.
pub const LAMBDA_MAX: f64 = 40.0;

/// Default bound on `|x|` for the rate-function root solve.
pub const DEFAULT_X_MAX: f64 = 10.0;

pub const DEFAULT_LDP_QUAD_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum LdpError {
    #[error("invalid parameter: {0}")]
    InvalidParameters(String),
    #[error("occupancy log-mgf is not finite on all of ℝ (radius {radius})")]
    UnsupportedOccupancy { radius: f64 },
    #[error("tilt |λ| = {lambda} exceeds {max}")]
    LambdaOutOfRange { lambda: f64, max: f64 },
    #[error("|x| = {x} exceeds the configured limit {max}")]
    XOutOfRange { x: f64, max: f64 },
    #[error("no tilt in [-{max}, {max}] produces mean current {x}")]
    BracketNotFound { x: f64, max: f64 },
    #[error("root solve failed: {0}")]
    Root(RootError),
    #[error("Newton iteration did not converge (gradient norm {gradient:e})")]
    NewtonNonConvergent { gradient: f64 },
    #[error("effective sample size {ess:.1} below {min}")]
    DegenerateWeights { ess: f64, min: f64 },
    #[error(transparent)]
    QuadratureNonConvergent(#[from] QuadError),
    #[error(transparent)]
    Occupancy(#[from] OccupancyError),
    #[error(transparent)]
    Simulation(#[from] SimError),
}

/// `Z_λ(y)`, the limiting per-site log-mgf of the signed crossing count of a
/// particle started at macroscopic distance `y` from the characteristic.
pub fn z_lambda(lambda: f64, y: f64, kappa2: f64, t: f64) -> f64 {
    let var = kappa2 * t;
    if y > 0.0 {
        (lambda.exp_m1() * normal_sf(var, y)).ln_1p()
    } else {
        ((-lambda).exp_m1() * normal_cdf(var, y)).ln_1p()
    }
}

/// `F_α(y)`, the tilted counterpart of `Φ_{κ2t}(y)`.
pub fn big_f(alpha: f64, y: f64, kappa2: f64, t: f64) -> f64 {
    tilted_pair(alpha, y, kappa2 * t).f
}

/// Tilted and untilted crossing probabilities at one `y`, each carried with
/// its complement so that tails keep full relative precision.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TiltedPair {
    pub phi: f64,
    pub phi_c: f64,
    pub f: f64,
    pub f_c: f64,
    /// `Z_λ(y)`.
    pub z: f64,
    /// `∂Z_λ(y)/∂λ`: `1 − F` right of the origin, `−F` left of it.
    pub dz: f64,
    /// `∂²Z_λ(y)/∂λ²`.
    pub d2z: f64,
}

pub(crate) fn tilted_pair(lambda: f64, y: f64, var: f64) -> TiltedPair {
    let phi = normal_cdf(var, y);
    let phi_c = normal_sf(var, y);
    if y > 0.0 {
        // F = Φ / (Φ + e^λ S), 1 − F = e^λ S / (Φ + e^λ S)
        let es = lambda.exp() * phi_c;
        let den = phi + es;
        let (f, f_c) = (phi / den, es / den);
        TiltedPair { phi, phi_c, f, f_c, z: (lambda.exp_m1() * phi_c).ln_1p(), dz: f_c, d2z: f * f_c }
    } else {
        // F = e^{−λ}Φ / (S + e^{−λ}Φ), 1 − F = S / (S + e^{−λ}Φ)
        let ep = (-lambda).exp() * phi;
        let den = phi_c + ep;
        let (f, f_c) = (ep / den, phi_c / den);
        TiltedPair { phi, phi_c, f, f_c, z: ((-lambda).exp_m1() * phi).ln_1p(), dz: -f, d2z: f * f_c }
    }
}

/// Bernoulli relative entropy `Br*_p(x) = x log(x/p) + (1−x) log((1−x)/(1−p))`
/// with `0·log 0 = 0`. Complements are passed in so both terms stay exact
/// when `x` and `p` approach 0 or 1.
pub fn bernoulli_dual(x: f64, x_c: f64, p: f64, p_c: f64) -> f64 {
    let term = |a: f64, a_c: f64, b: f64, b_c: f64| {
        if a == 0.0 {
            0.0
        } else if a > 0.5 {
            // a/b = 1 + (b_c − a_c)/b, computed without cancellation
            a * ((b_c - a_c) / b).ln_1p()
        } else {
            a * (a / b).ln()
        }
    };
    term(x, x_c, p, p_c) + term(x_c, x, p_c, p)
}

/// Inputs to the rate function at a single time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateModel {
    pub occupancy: OccupancyModel,
    pub kappa2: f64,
    pub t: f64,
    /// Quadrature runs over `[−y_cut, y_cut]`.
    pub y_cut: f64,
    pub quad_tol: f64,
    pub x_max: f64,
}

impl RateModel {
    pub fn new(occupancy: OccupancyModel, kappa2: f64, t: f64) -> Result<Self, LdpError> {
        Self::with_tolerance(occupancy, kappa2, t, DEFAULT_LDP_QUAD_TOL)
    }

    pub fn with_tolerance(occupancy: OccupancyModel, kappa2: f64, t: f64, quad_tol: f64) -> Result<Self, LdpError> {
        if !occupancy.has_entire_mgf() {
            return Err(LdpError::UnsupportedOccupancy { radius: occupancy.mgf_radius() });
        }
        if !(kappa2 > 0.0 && kappa2.is_finite()) {
            return Err(LdpError::InvalidParameters(format!("kappa2 must be positive, got {kappa2}")));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(LdpError::InvalidParameters(format!("t must be positive, got {t}")));
        }
        if !(quad_tol > 0.0 && quad_tol.is_finite()) {
            return Err(LdpError::InvalidParameters(format!("quad_tol must be positive, got {quad_tol}")));
        }
        let mut model = RateModel { occupancy, kappa2, t, y_cut: 0.0, quad_tol, x_max: DEFAULT_X_MAX };
        let sd = model.sd();
        let mut y = 8.0 * sd;
        while model.tail_bound(LAMBDA_MAX, y)? >= 0.1 * quad_tol {
            y += sd;
        }
        model.y_cut = y;
        Ok(model)
    }

    pub fn with_x_max(mut self, x_max: f64) -> Self {
        self.x_max = x_max;
        self
    }

    pub fn sd(&self) -> f64 {
        (self.kappa2 * self.t).sqrt()
    }

    pub(crate) fn var(&self) -> f64 {
        self.kappa2 * self.t
    }

    /// Bound on the integrals of `|γ(Z_λ)|`, `|γ′(Z_λ)∂Z_λ|` beyond `±y`.
    ///
    /// On `y > 0`, `|Z_λ| ≤ c_λ S(y)` with `c_λ = (e^{|λ|}−1) + 2(1−e^{−|λ|})`,
    /// `|Z_λ| ≤ |λ|`, `|∂Z_λ| ≤ 2e^{|λ|}S(y)`, and `|γ(z)| ≤ |z|·γ′(|z|)` by
    /// convexity; the left side mirrors this.
    pub(crate) fn tail_bound(&self, lambda: f64, y: f64) -> Result<f64, LdpError> {
        let l = lambda.abs();
        let g1 = self.occupancy.gamma_prime(l)?;
        let c = l.exp_m1() + 2.0 * -(-l).exp_m1();
        let tail = psi(self.var(), y);
        Ok(2.0 * g1 * (c + 2.0 * l.exp()) * tail)
    }

    pub(crate) fn check_lambda(&self, lambda: f64) -> Result<(), LdpError> {
        if !lambda.is_finite() || lambda.abs() > LAMBDA_MAX {
            return Err(LdpError::LambdaOutOfRange { lambda, max: LAMBDA_MAX });
        }
        Ok(())
    }

    /// Breakpoints for piecewise quadrature: the jump at the origin plus a
    /// geometric ladder in units of the standard deviation.
    pub(crate) fn breaks(&self) -> Vec<f64> {
        let sd = self.sd();
        let mut right: Vec<f64> =
            [0.5, 1.0, 2.0, 4.0, 8.0].iter().map(|k| k * sd).filter(|&b| b < self.y_cut).collect();
        right.push(self.y_cut);
        let mut out: Vec<f64> = right.iter().rev().map(|b| -b).collect();
        out.push(0.0);
        out.extend(right);
        out
    }
}
