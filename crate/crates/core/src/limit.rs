//! The Gaussian limit field of the scaled current.
//!
//! Covariances are assembled from `Ψ_{σ²}(x) = E(N − x)^+`: a dynamical part
//! `Γ_q` weighted by the per-site mean and an initial-noise part `Γ_0`
//! weighted by the per-site variance. Both also have integral
//! representations in terms of Brownian probabilities, evaluated here by
//! quadrature as an independent cross-check. Two samplers are provided: a
//! Cholesky factor on a finite grid, and a discretized white-noise
//! representation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

use crate::quad::{gk21, integrate_pieces, QuadError};
use crate::special::{bvn_cdf, normal_cdf, normal_sf, psi};

/// Absolute error target of the integral representations.
pub const DEFAULT_QUAD_TOL: f64 = 1e-10;

/// Diagonal shifts tried, in order, when factoring a covariance matrix.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

/// Gaussian tails beyond this many standard deviations are dropped from
/// the integral ranges (`Φ(−12) ≈ 2e-33`).
const TAIL_SDS: f64 = 12.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LimitError {
    #[error("invalid covariance parameters: {0}")]
    InvalidParameters(String),
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("quadrature failed: {0}")]
    QuadratureNonConvergent(#[from] QuadError),
    #[error("covariance matrix is not positive semidefinite even with jitter {jitter:e}")]
    NotPositiveSemidefinite { jitter: f64 },
    #[error("grid points must be distinct; ({t}, {r}) repeats")]
    DuplicatePoints { t: f64, r: f64 },
    #[error("time step {dt} exceeds {required} (a fiftieth of the smallest positive time)")]
    MeshTooCoarse { dt: f64, required: f64 },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
}

/// Parameters of the limit covariance: per-site mean and variance of the
/// occupation law, and the second moment of the jump kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitCovariance {
    pub rho0: f64,
    pub v0: f64,
    pub kappa2: f64,
}

impl LimitCovariance {
    pub fn new(rho0: f64, v0: f64, kappa2: f64) -> Result<Self, LimitError> {
        if !(rho0.is_finite() && rho0 >= 0.0) {
            return Err(LimitError::InvalidParameters(format!("rho0 = {rho0}")));
        }
        if !(v0.is_finite() && v0 >= 0.0) {
            return Err(LimitError::InvalidParameters(format!("v0 = {v0}")));
        }
        if !(kappa2.is_finite() && kappa2 > 0.0) {
            return Err(LimitError::InvalidParameters(format!("kappa2 = {kappa2}")));
        }
        Ok(LimitCovariance { rho0, v0, kappa2 })
    }

    /// `E Z(s, q) Z(t, r)`.
    pub fn cov(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        limit_cov(self, a, b)
    }
}

/// Initial-noise covariance `Ψ_{κ₂s} + Ψ_{κ₂t} − Ψ_{κ₂(t+s)}`, all at `|q − r|`.
pub fn gamma0(s: f64, q: f64, t: f64, r: f64, kappa2: f64) -> f64 {
    let x = (q - r).abs();
    psi(kappa2 * s, x) + psi(kappa2 * t, x) - psi(kappa2 * (t + s), x)
}

/// Dynamical covariance `Ψ_{κ₂(t+s)} − Ψ_{κ₂|t−s|}` at `|q − r|`.
pub fn gammaq(s: f64, q: f64, t: f64, r: f64, kappa2: f64) -> f64 {
    let x = (q - r).abs();
    psi(kappa2 * (t + s), x) - psi(kappa2 * (t - s).abs(), x)
}

pub fn limit_cov(params: &LimitCovariance, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (s, q) = a;
    let (t, r) = b;
    params.rho0 * gammaq(s, q, t, r, params.kappa2) + params.v0 * gamma0(s, q, t, r, params.kappa2)
}

/// Fractional Brownian motion covariance `ρ√(κ₂/2π)(√s + √t − √|t−s|)`.
pub fn fbm_cov(s: f64, t: f64, rho: f64, kappa2: f64) -> f64 {
    rho * (kappa2 / (2.0 * std::f64::consts::PI)).sqrt() * (s.sqrt() + t.sqrt() - (t - s).abs().sqrt())
}

/// `P(√κ₂ B(s) ≤ a)`.
fn bm_cdf(kappa2: f64, s: f64, a: f64) -> f64 {
    normal_cdf(kappa2 * s, a)
}

/// `P(√κ₂ B(s) > a)`.
fn bm_sf(kappa2: f64, s: f64, a: f64) -> f64 {
    normal_sf(kappa2 * s, a)
}

/// `P(√κ₂ B(s) ≤ a, √κ₂ B(t) > b)` for one Brownian path.
fn bm_joint_le_gt(kappa2: f64, s: f64, a: f64, t: f64, b: f64) -> f64 {
    if s == 0.0 {
        return if a >= 0.0 { bm_sf(kappa2, t, b) } else { 0.0 };
    }
    if t == 0.0 {
        return if b < 0.0 { bm_cdf(kappa2, s, a) } else { 0.0 };
    }
    let (ss, st) = ((kappa2 * s).sqrt(), (kappa2 * t).sqrt());
    let corr = (s.min(t) / (s * t).sqrt()).min(1.0);
    (bm_cdf(kappa2, s, a) - bvn_cdf(a / ss, b / st, corr)).max(0.0)
}

fn check_times(s: f64, t: f64) -> Result<(), LimitError> {
    for x in [s, t] {
        if x.is_nan() || x < 0.0 {
            return Err(LimitError::NegativeTime(x));
        }
    }
    Ok(())
}

fn tail_extent(kappa2: f64, s: f64, t: f64) -> f64 {
    TAIL_SDS * (kappa2 * s.max(t)).sqrt()
}

/// `Γ_q` from its integral representation
/// `∫ {P(A ≤ q−x) P(B > r−x) − P(A ≤ q−x, B > r−x)} dx`,
/// `A = √κ₂ B(s)`, `B = √κ₂ B(t)` on one Brownian path.
pub fn gammaq_integral(s: f64, q: f64, t: f64, r: f64, kappa2: f64) -> Result<f64, LimitError> {
    gammaq_integral_with_tol(s, q, t, r, kappa2, DEFAULT_QUAD_TOL)
}

pub fn gammaq_integral_with_tol(s: f64, q: f64, t: f64, r: f64, kappa2: f64, tol: f64) -> Result<f64, LimitError> {
    check_times(s, t)?;
    let ext = tail_extent(kappa2, s, t);
    if ext == 0.0 {
        return Ok(0.0);
    }
    let integrand =
        |x: f64| bm_cdf(kappa2, s, q - x) * bm_sf(kappa2, t, r - x) - bm_joint_le_gt(kappa2, s, q - x, t, r - x);
    let (lo, hi) = (q.min(r), q.max(r));
    Ok(integrate_pieces(integrand, &[lo - ext, lo, hi, hi + ext], tol)?.value)
}

/// `Γ_0` from its four-term integral representation with independent
/// Brownian values at times `s` and `t`.
pub fn gamma0_integral(s: f64, q: f64, t: f64, r: f64, kappa2: f64) -> Result<f64, LimitError> {
    gamma0_integral_with_tol(s, q, t, r, kappa2, DEFAULT_QUAD_TOL)
}

pub fn gamma0_integral_with_tol(s: f64, q: f64, t: f64, r: f64, kappa2: f64, tol: f64) -> Result<f64, LimitError> {
    check_times(s, t)?;
    let ext = tail_extent(kappa2, s, t);
    if ext == 0.0 {
        return Ok(0.0);
    }
    let (lo, hi) = (q.min(r), q.max(r));
    let part = tol / 4.0;
    let above = integrate_pieces(|x| bm_cdf(kappa2, s, q - x) * bm_cdf(kappa2, t, r - x), &[hi, hi + ext], part)?;
    let below = integrate_pieces(|x| bm_sf(kappa2, s, q - x) * bm_sf(kappa2, t, r - x), &[lo - ext, lo], part)?;
    let mut total = above.value + below.value;
    if r > q {
        total -= integrate_pieces(|x| bm_cdf(kappa2, s, q - x) * bm_sf(kappa2, t, r - x), &[q, r], part)?.value;
    }
    if q > r {
        total -= integrate_pieces(|x| bm_sf(kappa2, s, q - x) * bm_cdf(kappa2, t, r - x), &[r, q], part)?.value;
    }
    Ok(total)
}

/// Limit covariance on a finite set of points, with its Cholesky factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridGaussian {
    pub points: Vec<(f64, f64)>,
    pub cov: Vec<Vec<f64>>,
    pub chol: Vec<Vec<f64>>,
    pub jitter_used: f64,
}

pub fn build_grid_gaussian(params: &LimitCovariance, points: &[(f64, f64)]) -> Result<GridGaussian, LimitError> {
    for (i, &p) in points.iter().enumerate() {
        if p.0.is_nan() || p.0 < 0.0 {
            return Err(LimitError::NegativeTime(p.0));
        }
        if points[..i].contains(&p) {
            return Err(LimitError::DuplicatePoints { t: p.0, r: p.1 });
        }
    }
    let cov: Vec<Vec<f64>> =
        points.iter().map(|&a| points.iter().map(|&b| limit_cov(params, a, b)).collect()).collect();
    for jitter in JITTER_LADDER {
        if let Some(chol) = cholesky_semidefinite(&cov, jitter) {
            return Ok(GridGaussian { points: points.to_vec(), cov, chol, jitter_used: jitter });
        }
    }
    Err(LimitError::NotPositiveSemidefinite { jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] })
}

/// Lower-triangular `L` with `L Lᵀ = A + jitter·I`. Pivots that vanish to
/// rounding are accepted when the rest of their column vanishes too, so
/// degenerate (zero-variance) coordinates factor exactly.
pub fn cholesky_semidefinite(a: &[Vec<f64>], jitter: f64) -> Option<Vec<Vec<f64>>> {
    let n = a.len();
    let scale = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let zero_tol = 1e-13 * scale;
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let d = a[j][j] + jitter - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if d < -zero_tol {
            return None;
        }
        if d <= zero_tol {
            for i in j + 1..n {
                let resid = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                if resid.abs() > 1e-11 * scale {
                    return None;
                }
            }
            continue;
        }
        let pivot = d.sqrt();
        l[j][j] = pivot;
        for i in j + 1..n {
            l[i][j] = (a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>()) / pivot;
        }
    }
    Some(l)
}

/// One draw `L·ξ` with i.i.d. standard normal `ξ`.
pub fn sample_limit_process<R: Rng + ?Sized>(gg: &GridGaussian, rng: &mut R) -> Vec<f64> {
    let xi: Vec<f64> = (0..gg.points.len()).map(|_| rng.sample(StandardNormal)).collect();
    gg.chol.iter().map(|row| row.iter().zip(&xi).map(|(l, x)| l * x).sum()).collect()
}

/// Cell sizes of the stochastic-integral discretization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub dt: f64,
    pub dz: f64,
    /// Spatial extent beyond the outermost `r`.
    pub z_max: f64,
}

impl Mesh {
    /// `dt = t_min/50`, `dz = √(κ₂ t_min)/10`, `z_max = 6√(κ₂ t_max)`.
    pub fn default_for(params: &LimitCovariance, points: &[(f64, f64)]) -> Mesh {
        let (t_min, t_max) = positive_time_range(points);
        Mesh { dt: t_min / 50.0, dz: 0.1 * (params.kappa2 * t_min).sqrt(), z_max: 6.0 * (params.kappa2 * t_max).sqrt() }
    }
}

fn positive_time_range(points: &[(f64, f64)]) -> (f64, f64) {
    let positive = points.iter().map(|p| p.0).filter(|&t| t > 0.0);
    let t_min = positive.clone().fold(f64::INFINITY, f64::min);
    let t_max = positive.fold(0.0, f64::max);
    if t_min.is_finite() {
        (t_min, t_max)
    } else {
        (1.0, 1.0)
    }
}

/// Splits `[lo, hi]` at the sorted `cuts` and subdivides every piece into
/// equal cells no longer than `h`.
fn cell_edges(lo: f64, hi: f64, cuts: &[f64], h: f64) -> Vec<f64> {
    let mut knots = vec![lo];
    knots.extend(cuts.iter().copied().filter(|&c| c > lo && c < hi));
    knots.push(hi);
    knots.dedup();
    let mut edges = vec![lo];
    for w in knots.windows(2) {
        let pieces = ((w[1] - w[0]) / h * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        for i in 1..=pieces {
            edges.push(if i == pieces { w[1] } else { w[0] + (w[1] - w[0]) * i as f64 / pieces as f64 });
        }
    }
    edges
}

/// Discretized white-noise representation of the limit field: the
/// space-time noise integral against the heat kernel plus the initial-noise
/// integral, each cell carrying an independent standard normal weight.
///
/// Each cell coefficient is the signed square root of the exact integral of
/// the squared integrand over the cell, so marginal variances carry no
/// discretization error even where the heat kernel is singular.
#[derive(Debug, Clone)]
pub struct IntegralSampler {
    points: Vec<(f64, f64)>,
    /// `noise[k]` lists `(cell index, coefficient)` for point `k`.
    noise: Vec<Vec<(usize, f64)>>,
    cells: usize,
    /// Cells below this index belong to the space-time noise.
    space_time_cells: usize,
}

impl IntegralSampler {
    pub fn new(params: &LimitCovariance, points: &[(f64, f64)], mesh: Mesh) -> Result<Self, LimitError> {
        for &(t, _) in points {
            if t.is_nan() || t < 0.0 {
                return Err(LimitError::NegativeTime(t));
            }
        }
        if !(mesh.dt > 0.0 && mesh.dz > 0.0 && mesh.z_max > 0.0) {
            return Err(LimitError::InvalidMesh(format!("{mesh:?}")));
        }
        let (t_min, t_max) = positive_time_range(points);
        let required = t_min / 50.0;
        if mesh.dt > required * (1.0 + 1e-12) {
            return Err(LimitError::MeshTooCoarse { dt: mesh.dt, required });
        }
        let mut ts: Vec<f64> = points.iter().map(|p| p.0).collect();
        let mut rs: Vec<f64> = points.iter().map(|p| p.1).collect();
        ts.sort_by(f64::total_cmp);
        rs.sort_by(f64::total_cmp);
        let time_edges = cell_edges(0.0, t_max, &ts, mesh.dt);
        let space_edges = cell_edges(rs[0] - mesh.z_max, rs[rs.len() - 1] + mesh.z_max, &rs, mesh.dz);
        let nz = space_edges.len() - 1;
        let space_time_cells = (time_edges.len() - 1) * nz;
        let kappa2 = params.kappa2;

        let mut noise = Vec::with_capacity(points.len());
        for &(t, r) in points {
            let mut coeffs = Vec::new();
            if params.rho0 > 0.0 && t > 0.0 {
                for (a, s_cell) in time_edges.windows(2).enumerate() {
                    if s_cell[1] > t * (1.0 + 1e-12) {
                        break;
                    }
                    // substitute u = √(t − s): ∫φ²_{κ₂(t−s)}(r − z) dz ds = ∫ D(u) du / √(κ₂π)
                    let (u_lo, u_hi) = ((t - s_cell[1]).max(0.0).sqrt(), (t - s_cell[0]).max(0.0).sqrt());
                    for (b, z_cell) in space_edges.windows(2).enumerate() {
                        let (val, _) = gk21(
                            &mut |u: f64| {
                                let var = 0.5 * kappa2 * u * u;
                                normal_cdf(var, r - z_cell[0]) - normal_cdf(var, r - z_cell[1])
                            },
                            u_lo,
                            u_hi,
                        );
                        let mass = params.rho0 * kappa2 * val.max(0.0) / (kappa2 * std::f64::consts::PI).sqrt();
                        if mass > 0.0 {
                            coeffs.push((a * nz + b, mass.sqrt()));
                        }
                    }
                }
            }
            if params.v0 > 0.0 && t > 0.0 {
                for (b, x_cell) in space_edges.windows(2).enumerate() {
                    let mid = 0.5 * (x_cell[0] + x_cell[1]);
                    let sign = if mid > r { 1.0 } else { -1.0 };
                    let (val, _) = gk21(
                        &mut |x: f64| {
                            let h = normal_cdf(kappa2 * t, -(x - r).abs());
                            h * h
                        },
                        x_cell[0],
                        x_cell[1],
                    );
                    let mass = params.v0 * val.max(0.0);
                    if mass > 0.0 {
                        coeffs.push((space_time_cells + b, sign * mass.sqrt()));
                    }
                }
            }
            noise.push(coeffs);
        }
        Ok(IntegralSampler { points: points.to_vec(), noise, cells: space_time_cells + nz, space_time_cells })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Number of independent Gaussian cell weights per draw.
    pub fn cells(&self) -> usize {
        self.cells
    }

    /// Cells `0..space_time_cells()` carry the space-time noise, the rest
    /// the initial-profile noise.
    pub fn space_time_cells(&self) -> usize {
        self.space_time_cells
    }

    /// Covariance of the discretized field, `A Aᵀ`.
    pub fn covariance(&self) -> Vec<Vec<f64>> {
        let dense: Vec<Vec<f64>> = self
            .noise
            .iter()
            .map(|row| {
                let mut d = vec![0.0; self.cells];
                for &(c, v) in row {
                    d[c] = v;
                }
                d
            })
            .collect();
        dense.iter().map(|a| dense.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum()).collect()).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let xi: Vec<f64> = (0..self.cells).map(|_| rng.sample(StandardNormal)).collect();
        self.noise.iter().map(|row| row.iter().map(|&(c, v)| v * xi[c]).sum()).collect()
    }
}

/// One draw of the discretized stochastic-integral representation.
pub fn sample_via_integral<R: Rng + ?Sized>(
    params: &LimitCovariance,
    points: &[(f64, f64)],
    mesh: Mesh,
    rng: &mut R,
) -> Result<Vec<f64>, LimitError> {
    Ok(IntegralSampler::new(params, points, mesh)?.sample(rng))
}

/// CSV table of `(s, q, t, r, gamma0, gammaq, cov)` over all point pairs.
pub fn write_limit_table<W: Write>(
    out: &mut W,
    params: &LimitCovariance,
    points: &[(f64, f64)],
) -> std::io::Result<()> {
    writeln!(out, "# schema_version=1")?;
    writeln!(out, "s,q,t,r,gamma0,gammaq,cov")?;
    for &(s, q) in points {
        for &(t, r) in points {
            writeln!(
                out,
                "{s},{q},{t},{r},{:.15e},{:.15e},{:.15e}",
                gamma0(s, q, t, r, params.kappa2),
                gammaq(s, q, t, r, params.kappa2),
                limit_cov(params, (s, q), (t, r))
            )?;
        }
    }
    Ok(())
}
