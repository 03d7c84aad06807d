//! Goodness-of-fit tests: Kolmogorov–Smirnov (one and two sample, with a
//! lattice variant) and Pearson chi-square against an integer pmf.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_ur;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Asymptotic Kolmogorov tail `P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// p-value for statistic `d` at effective sample size `ne`, with Stephens'
/// small-sample correction.
fn ks_p_value(d: f64, ne: f64) -> f64 {
    let s = ne.sqrt();
    kolmogorov_sf((s + 0.12 + 0.11 / s) * d)
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// One-sample KS test against a continuous cdf.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> KsResult {
    let xs = sorted(samples);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    KsResult { statistic: d, p_value: ks_p_value(d, n) }
}

/// One-sample KS test for data on the lattice `step·ℤ` against the
/// discretization of a continuous law that assigns `F(x + step/2) − F(x − step/2)`
/// to the lattice point `x`. Both distribution functions are step functions
/// with jumps on the lattice, so the supremum is taken over lattice points.
/// The asymptotic p-value is conservative for discrete nulls.
pub fn ks_lattice<F: Fn(f64) -> f64>(samples: &[f64], step: f64, cdf: F) -> KsResult {
    let xs = sorted(samples);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    let mut below = 0usize;
    let mut i = 0;
    while i < xs.len() {
        let x = xs[i];
        let mut j = i;
        while j < xs.len() && xs[j] == x {
            j += 1;
        }
        // just below x the empirical cdf is below/n and the model sits at its previous jump
        d = d.max((below as f64 / n - cdf(x - 0.5 * step)).abs());
        below = j;
        d = d.max((below as f64 / n - cdf(x + 0.5 * step)).abs());
        i = j;
    }
    KsResult { statistic: d, p_value: ks_p_value(d, n) }
}

/// Two-sample KS test; ties are resolved by evaluating both empirical cdfs
/// after each distinct value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    let (xa, xb) = (sorted(a), sorted(b));
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    KsResult { statistic: d, p_value: ks_p_value(d, na * nb / (na + nb)) }
}

/// Upper tail of the chi-square distribution with `dof` degrees of freedom.
pub fn chi_square_sf(statistic: f64, dof: usize) -> f64 {
    if statistic <= 0.0 {
        return 1.0;
    }
    gamma_ur(dof as f64 / 2.0, statistic / 2.0)
}

/// Pearson chi-square test of integer samples against a pmf given as
/// ascending `(value, probability)` pairs. Adjacent values are pooled until
/// every cell expects at least `min_expected` counts; the outermost cells
/// absorb everything beyond the listed support.
pub fn chi_square_integer(samples: &[i64], pmf: &[(i64, f64)], min_expected: f64) -> ChiSquareResult {
    let n = samples.len() as f64;
    let total: f64 = pmf.iter().map(|p| p.1).sum();
    // cells as (largest value included, probability)
    let mut cells: Vec<(i64, f64)> = Vec::new();
    let mut acc = 0.0;
    let mut cumulative = 0.0;
    for &(k, p) in pmf {
        acc += p;
        cumulative += p;
        if acc * n >= min_expected && (total - cumulative) * n >= min_expected {
            cells.push((k, acc));
            acc = 0.0;
        }
    }
    cells.push((i64::MAX, acc));
    // mass missing from the listed support is spread over the edge cells
    let missing = (1.0 - total).max(0.0);
    let len = cells.len();
    cells[0].1 += 0.5 * missing;
    cells[len - 1].1 += 0.5 * missing;

    let mut observed = vec![0usize; len];
    for &x in samples {
        let idx = cells.partition_point(|c| c.0 < x);
        observed[idx.min(len - 1)] += 1;
    }
    let statistic: f64 = observed
        .iter()
        .zip(&cells)
        .map(|(&o, &(_, p))| {
            let e = p * n;
            (o as f64 - e).powi(2) / e
        })
        .sum();
    let dof = len.saturating_sub(1).max(1);
    ChiSquareResult { statistic, dof, p_value: chi_square_sf(statistic, dof) }
}
