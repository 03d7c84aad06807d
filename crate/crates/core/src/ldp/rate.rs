use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{bernoulli_dual, tilted_pair, LdpError, RateModel, TiltedPair, LAMBDA_MAX};
use crate::quad::{gk21, integrate};
use crate::roots::{solve_increasing, RootError};

/// Relative accuracy floor; absolute tolerances below this fraction of the
/// integral's magnitude are not attainable in double precision.
const RELATIVE_FLOOR: f64 = 1e-13;

/// Integrates `g(pair)` over `[−y_cut, y_cut]`, split at the origin. The
/// absolute tolerance is raised to `RELATIVE_FLOOR` times a one-pass
/// magnitude estimate when that is larger.
fn integrate_model<G>(model: &RateModel, lambda: f64, tol: f64, mut g: G) -> Result<f64, LdpError>
where
    G: FnMut(&TiltedPair) -> Result<f64, LdpError>,
{
    let var = model.var();
    let breaks = model.breaks();
    let mut failure = None;
    let mut f = |y: f64| match g(&tilted_pair(lambda, y, var)) {
        Ok(v) => v,
        Err(e) => {
            failure.get_or_insert(e);
            0.0
        }
    };
    let span = breaks[breaks.len() - 1] - breaks[0];
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let magnitude = gk21(&mut |y| f(y).abs(), w[0], w[1]).0;
        let share = (tol * (w[1] - w[0]) / span).max(RELATIVE_FLOOR * magnitude);
        total += integrate(&mut f, w[0], w[1], share)?.value;
    }
    match failure {
        Some(e) => Err(e),
        None => Ok(total),
    }
}

/// `Λ(λ) = ∫ γ(Z_λ(y)) dy`.
pub fn lambda_fn(model: &RateModel, lambda: f64) -> Result<f64, LdpError> {
    model.check_lambda(lambda)?;
    if lambda == 0.0 {
        return Ok(0.0);
    }
    integrate_model(model, lambda, model.quad_tol, |p| Ok(model.occupancy.gamma(p.z)?))
}

/// `Λ′(λ) = ∫ γ′(Z_λ(y)) ∂_λZ_λ(y) dy`; at `λ = α(x)` this is the mean
/// current `x` of the tilted system.
pub fn lambda_prime(model: &RateModel, lambda: f64) -> Result<f64, LdpError> {
    model.check_lambda(lambda)?;
    integrate_model(model, lambda, model.quad_tol, |p| Ok(model.occupancy.gamma_prime(p.z)? * p.dz))
}

/// `Λ″(λ) = ∫ [γ″(Z)(∂Z)² + γ′(Z)∂²Z] dy`.
pub fn lambda_second(model: &RateModel, lambda: f64) -> Result<f64, LdpError> {
    model.check_lambda(lambda)?;
    integrate_model(model, lambda, model.quad_tol, |p| {
        Ok(model.occupancy.gamma_second(p.z)? * p.dz * p.dz + model.occupancy.gamma_prime(p.z)? * p.d2z)
    })
}

/// Solves `Λ′(α) = x`. Newton steps are safeguarded by bisection on
/// `[−LAMBDA_MAX, LAMBDA_MAX]`; the stopping rule is on the residual in `x`.
pub fn alpha_of_x(model: &RateModel, x: f64) -> Result<f64, LdpError> {
    if !x.is_finite() || x.abs() > model.x_max {
        return Err(LdpError::XOutOfRange { x, max: model.x_max });
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let tol = 1e-10;
    let eval = |a: f64| -> Result<(f64, f64), LdpError> { Ok((lambda_prime(model, a)?, lambda_second(model, a)?)) };
    // Λ′ is odd and increasing, so the root has the sign of x; the bracket
    // grows from |λ| = 1 to keep evaluations away from huge tilts
    let s = x.signum();
    let mut edge = 1.0f64;
    while s * lambda_prime(model, s * edge)? < x.abs() {
        if edge >= LAMBDA_MAX {
            return Err(LdpError::BracketNotFound { x, max: LAMBDA_MAX });
        }
        edge = (2.0 * edge).min(LAMBDA_MAX);
    }
    let (lo, hi) = if s > 0.0 { (0.0, edge) } else { (-edge, 0.0) };
    let start = x / lambda_second(model, 0.0)?;
    match solve_increasing(eval, x, lo, hi, start, tol) {
        Ok(root) => Ok(root.x),
        Err(RootError::BracketNotFound { .. }) => Err(LdpError::BracketNotFound { x, max: LAMBDA_MAX }),
        Err(e) => Err(LdpError::Root(e)),
    }
}

/// `I(x) = α(x)·x − Λ(α(x))`, the supremum of `λx − Λ(λ)`.
pub fn rate_dual(model: &RateModel, x: f64) -> Result<f64, LdpError> {
    let alpha = alpha_of_x(model, x)?;
    Ok(alpha * x - lambda_fn(model, alpha)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecomposedRate {
    pub alpha: f64,
    /// Cost of tilting the initial occupations.
    pub i1: f64,
    /// Cost of tilting the crossing probabilities.
    pub i2: f64,
    pub total: f64,
}

/// `I₁(x) = ∫ γ*(γ′(Z_α)) dy` and `I₂(x) = ∫ γ′(Z_α) Br*_Φ(F_α) dy` at
/// `α = α(x)`.
pub fn rate_decomposed(model: &RateModel, x: f64) -> Result<DecomposedRate, LdpError> {
    let alpha = alpha_of_x(model, x)?;
    if alpha == 0.0 {
        return Ok(DecomposedRate { alpha, i1: 0.0, i2: 0.0, total: 0.0 });
    }
    let occ = &model.occupancy;
    let i1 = integrate_model(model, alpha, model.quad_tol, |p| {
        let mean = occ.gamma_prime(p.z)?;
        Ok(occ.gamma_star(mean))
    })?;
    let i2 = integrate_model(model, alpha, model.quad_tol, |p| {
        Ok(occ.gamma_prime(p.z)? * bernoulli_dual(p.f, p.f_c, p.phi, p.phi_c))
    })?;
    Ok(DecomposedRate { alpha, i1, i2, total: i1 + i2 })
}

/// The Poisson(ρ) rate function in closed form,
/// `x·asinh(u) − ρ√(2κ₂t/π)(√(1+u²) − 1)` with `u = x√π / (ρ√(2κ₂t))`.
pub fn poisson_rate_closed(x: f64, rho: f64, kappa2: f64, t: f64) -> f64 {
    let scale = rho * (2.0 * kappa2 * t / std::f64::consts::PI).sqrt();
    let u = x / scale;
    let root = (1.0 + u * u).sqrt();
    x * u.asinh() - scale * (u * u / (root + 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub x: f64,
    pub rate: f64,
    pub i1: f64,
    pub i2: f64,
    pub alpha: f64,
    /// `|I₁ + I₂ − rate|`.
    pub residual: f64,
}

/// Rate function on a list of `x` values: the dual value as `rate`, the
/// decomposition alongside, and their disagreement.
pub fn rate_table(model: &RateModel, xs: &[f64]) -> Result<Vec<RateRow>, LdpError> {
    xs.iter()
        .map(|&x| {
            let d = rate_decomposed(model, x)?;
            let rate = d.alpha * x - lambda_fn(model, d.alpha)?;
            Ok(RateRow { x, rate, i1: d.i1, i2: d.i2, alpha: d.alpha, residual: (d.total - rate).abs() })
        })
        .collect()
}

pub fn write_rate_table<W: Write>(out: &mut W, rows: &[RateRow]) -> std::io::Result<()> {
    writeln!(out, "# schema_version=1")?;
    writeln!(out, "x,I,I1,I2,alpha,residual")?;
    for r in rows {
        writeln!(out, "{},{:.12e},{:.12e},{:.12e},{:.12e},{:.3e}", r.x, r.rate, r.i1, r.i2, r.alpha, r.residual)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occupancy::OccupancyModel;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn poisson_2pi(rho: f64) -> RateModel {
        RateModel::new(OccupancyModel::poisson(rho).unwrap(), 2.0 * PI, 1.0).unwrap()
    }

    fn models() -> Vec<RateModel> {
        [
            OccupancyModel::poisson(0.5).unwrap(),
            OccupancyModel::poisson(2.0).unwrap(),
            OccupancyModel::deterministic(1),
            OccupancyModel::custom(&[(0, 0.5), (2, 0.5)]).unwrap(),
        ]
        .into_iter()
        .map(|o| RateModel::new(o, 1.0, 1.0).unwrap())
        .collect()
    }

    fn x_grid() -> Vec<f64> {
        (-12..=12).map(|k| k as f64 * 0.25).collect()
    }

    #[test]
    fn lambda_poisson_closed_form() {
        let m = poisson_2pi(1.0);
        assert_eq!(lambda_fn(&m, 0.0).unwrap(), 0.0);
        let e = std::f64::consts::E;
        assert!((lambda_fn(&m, 1.0).unwrap() - (e + 1.0 / e - 2.0)).abs() < 1e-9);
        for &l in &[-2.0, -0.3, 0.7, 3.0] {
            assert!((lambda_prime(&m, l).unwrap() - 2.0 * f64::sinh(l)).abs() < 1e-8);
            assert!((lambda_second(&m, l).unwrap() - 2.0 * f64::cosh(l)).abs() < 1e-8);
        }
        assert!(lambda_fn(&m, 41.0).is_err());
    }

    #[test]
    fn lambda_deterministic_self_convergence() {
        // reference: ∫Z_1(y)dy on each half-line at tolerance 1e-13, split at 0
        let m = RateModel::new(OccupancyModel::deterministic(1), 1.0, 1.0).unwrap();
        let half = |sign: f64, tol: f64| {
            integrate(|y| super::super::z_lambda(1.0, sign * y, 1.0, 1.0), 0.0, 40.0, tol).unwrap().value
        };
        let coarse = half(1.0, 1e-10) + half(-1.0, 1e-10);
        let fine = half(1.0, 1e-13) + half(-1.0, 1e-13);
        assert!((coarse - fine).abs() < 1e-10);
        assert!((lambda_fn(&m, 1.0).unwrap() - fine).abs() < 1e-9);
    }

    #[test]
    fn lambda_prime_vanishes_at_zero() {
        for m in models() {
            assert!(lambda_prime(&m, 0.0).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn lambda_prime_gradient_check() {
        for m in models() {
            for &l in &[-2.0, -0.5, 0.5, 2.0] {
                let h = 1e-5;
                let fd = (lambda_fn(&m, l + h).unwrap() - lambda_fn(&m, l - h).unwrap()) / (2.0 * h);
                let d = lambda_prime(&m, l).unwrap();
                assert!((fd - d).abs() < 1e-6, "{:?} λ={l}: {fd} vs {d}", m.occupancy.kind());
            }
        }
    }

    #[test]
    fn alpha_of_x_poisson() {
        let m = poisson_2pi(1.0);
        assert_eq!(alpha_of_x(&m, 0.0).unwrap(), 0.0);
        let x = 2.0 * f64::sinh(1.0);
        assert!((alpha_of_x(&m, x).unwrap() - 1.0).abs() < 1e-8);
        for &x in &[0.3, 1.0, 4.0] {
            let a = alpha_of_x(&m, x).unwrap();
            let b = alpha_of_x(&m, -x).unwrap();
            assert!((a + b).abs() < 1e-9);
        }
        assert!(matches!(alpha_of_x(&m, 11.0), Err(LdpError::XOutOfRange { .. })));
    }

    #[test]
    fn bracket_failure_is_reported() {
        // with one particle per site the tilted current only grows like √λ
        let m = RateModel::new(OccupancyModel::deterministic(1), 1.0, 1.0).unwrap();
        let reach = lambda_prime(&m, LAMBDA_MAX).unwrap();
        assert!(reach < 9.5, "{reach}");
        assert!(matches!(alpha_of_x(&m, 9.9), Err(LdpError::BracketNotFound { .. })));
    }

    #[test]
    fn rate_dual_reference_value() {
        let m = poisson_2pi(1.0);
        assert_eq!(rate_dual(&m, 0.0).unwrap(), 0.0);
        let x = 2.0 * f64::sinh(1.0);
        let expected = 2.0 - 2.0 * (-1.0f64).exp();
        assert!((rate_dual(&m, x).unwrap() - expected).abs() < 1e-8);
        assert!((poisson_rate_closed(x, 1.0, 2.0 * PI, 1.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn dual_dominates_grid_supremum() {
        for m in models() {
            for &x in &[-0.3, 0.2, 0.35] {
                let i = rate_dual(&m, x).unwrap();
                let grid_sup = (-80..=80)
                    .map(|k| {
                        let l = k as f64 * 0.05;
                        l * x - lambda_fn(&m, l).unwrap()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!(grid_sup <= i + 1e-8);
                assert!(grid_sup > i - 1e-2);
            }
        }
    }

    #[test]
    fn decomposition_matches_dual() {
        for m in models() {
            for x in x_grid() {
                let d = rate_decomposed(&m, x).unwrap();
                let i = rate_dual(&m, x).unwrap();
                assert!((d.total - i).abs() <= 1e-6, "{:?} x={x}: {} vs {i}", m.occupancy.kind(), d.total);
                assert!(d.i1 >= -1e-12 && d.i2 >= -1e-12);
            }
        }
    }

    #[test]
    fn deterministic_has_no_occupation_cost() {
        let m = RateModel::new(OccupancyModel::deterministic(1), 1.0, 1.0).unwrap();
        for &x in &[-0.3, 0.1, 0.25] {
            let d = rate_decomposed(&m, x).unwrap();
            assert_eq!(d.i1, 0.0);
            // the pure relative-entropy integral with F and Φ written out directly
            let alpha = d.alpha;
            let kl = |y: f64| {
                let phi = crate::special::normal_cdf(1.0, y);
                let f = (-alpha).exp() * phi / (1.0 - phi + (-alpha).exp() * phi);
                let term = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a * (a / b).ln() };
                term(1.0 - f, 1.0 - phi) + term(f, phi)
            };
            let reference =
                integrate(kl, -9.0, 0.0, 1e-12).unwrap().value + integrate(kl, 0.0, 9.0, 1e-12).unwrap().value;
            assert!((d.i2 - reference).abs() < 1e-8, "{} vs {reference}", d.i2);
        }
        assert_eq!(rate_decomposed(&m, 0.0).unwrap().total, 0.0);
    }

    #[test]
    fn poisson_closed_form_properties() {
        assert_eq!(poisson_rate_closed(0.0, 1.3, 1.0, 2.0), 0.0);
        for x in x_grid() {
            let a = poisson_rate_closed(x, 1.3, 1.0, 2.0);
            let b = poisson_rate_closed(-x, 1.3, 1.0, 2.0);
            assert!((a - b).abs() < 1e-12);
        }
        for m in &models()[..2] {
            let rho = m.occupancy.rho0();
            for x in x_grid() {
                let closed = poisson_rate_closed(x, rho, m.kappa2, m.t);
                assert!((closed - rate_dual(m, x).unwrap()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn duality_chain() {
        for m in models() {
            for &l in &[-1.5, -0.4, 0.6, 1.2] {
                let x = lambda_prime(&m, l).unwrap();
                let i = rate_dual(&m, x).unwrap();
                assert!((i - (l * x - lambda_fn(&m, l).unwrap())).abs() < 1e-8);
                let h = 1e-4;
                let di = (rate_dual(&m, x + h).unwrap() - rate_dual(&m, x - h).unwrap()) / (2.0 * h);
                assert!((di - l).abs() < 1e-5, "I′ {di} vs λ {l}");
            }
        }
    }

    #[test]
    fn rate_is_strictly_convex() {
        for m in models() {
            let xs: Vec<f64> = (-10..=10).map(|k| k as f64 * 0.03).collect();
            let vals: Vec<f64> = xs.iter().map(|&x| rate_dual(&m, x).unwrap()).collect();
            for w in vals.windows(3) {
                assert!(w[0] + w[2] - 2.0 * w[1] > 0.0);
            }
            assert!(vals.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn lambda_prime_strictly_increasing() {
        for m in models() {
            let vals: Vec<f64> = (-20..=20).map(|k| lambda_prime(&m, k as f64 * 0.5).unwrap()).collect();
            assert!(vals.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn rate_table_csv() {
        let m = poisson_2pi(1.0);
        let rows = rate_table(&m, &[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(rows[1].rate, 0.0);
        let mut buf = Vec::new();
        write_rate_table(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# schema_version=1\nx,I,I1,I2,alpha,residual\n"));
        assert!(rows.iter().all(|r| r.residual < 1e-6));
        assert_eq!(text.lines().count(), 5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn lambda_is_midpoint_convex(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            for m in models() {
                let mid = lambda_fn(&m, 0.5 * (a + b)).unwrap();
                let avg = 0.5 * (lambda_fn(&m, a).unwrap() + lambda_fn(&m, b).unwrap());
                prop_assert!(mid <= avg + 1e-9);
            }
        }
    }
}
