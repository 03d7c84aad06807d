//! Root finding for monotone increasing functions: bracket expansion and a
//! bisection-safeguarded Newton iteration.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RootError {
    #[error("no sign change for target {target} within [{lo}, {hi}]")]
    BracketNotFound { target: f64, lo: f64, hi: f64 },
    #[error("root iteration did not converge (residual {residual:e} after {iterations} steps)")]
    NonConvergent { residual: f64, iterations: usize },
    #[error("function evaluation failed: {0}")]
    Evaluation(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Solves `g(x) = target` for a strictly increasing `g` on `[lo, hi]`.
///
/// `eval` returns `(g(x), g'(x))`. The bracket must satisfy
/// `g(lo) ≤ target ≤ g(hi)`; the search stops when `|g(x) − target| ≤ tol`.
/// Newton steps that leave the current bracket are replaced by bisection.
pub fn solve_increasing<E, G>(
    mut eval: G,
    target: f64,
    lo: f64,
    hi: f64,
    start: f64,
    tol: f64,
) -> Result<Root, RootError>
where
    G: FnMut(f64) -> Result<(f64, f64), E>,
    E: std::fmt::Display,
{
    let mut call = |x: f64| eval(x).map_err(|e| RootError::Evaluation(e.to_string()));
    let (mut a, mut b) = (lo, hi);
    let (ga, _) = call(a)?;
    let (gb, _) = call(b)?;
    if ga - target > tol || target - gb > tol {
        return Err(RootError::BracketNotFound { target, lo, hi });
    }
    if (ga - target).abs() <= tol {
        return Ok(Root { x: a, residual: ga - target, iterations: 0 });
    }
    if (gb - target).abs() <= tol {
        return Ok(Root { x: b, residual: gb - target, iterations: 0 });
    }
    let mut x = start.clamp(a, b);
    for it in 1..=200 {
        let (gx, dg) = call(x)?;
        let r = gx - target;
        if r.abs() <= tol {
            return Ok(Root { x, residual: r, iterations: it });
        }
        if r < 0.0 {
            a = x;
        } else {
            b = x;
        }
        let newton = x - r / dg;
        x = if dg > 0.0 && newton.is_finite() && newton > a && newton < b { newton } else { 0.5 * (a + b) };
        if b - a <= f64::EPSILON * (1.0 + a.abs().max(b.abs())) {
            let (gx, _) = call(x)?;
            return Err(RootError::NonConvergent { residual: gx - target, iterations: it });
        }
    }
    let (gx, _) = call(x)?;
    Err(RootError::NonConvergent { residual: gx - target, iterations: 200 })
}
