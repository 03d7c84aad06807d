//! Streaming ensemble statistics and the comparison reports built on them.
//!
//! Replicas are grouped into contiguous batches. Each batch is accumulated
//! sequentially and batches are merged in index order, so every statistic is
//! a pure function of the configuration no matter how many workers ran the
//! batches. The batches double as jackknife blocks for the covariance
//! standard errors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::current::{CurrentField, PreparedExperiment, SimError};
use crate::gof::{ks_lattice, ks_one_sample};
use crate::limit::{limit_cov, LimitCovariance};
use crate::special::normal_cdf;

/// Jackknife blocks used for covariance standard errors.
pub const DEFAULT_BATCHES: usize = 50;

/// Per-point cap on retained raw samples.
pub const DEFAULT_RAW_CAP: usize = 100_000;

const MIN_REPORT_COUNT: u64 = 100;
const MIN_SCALING_COUNT: u64 = 1_000;
const MIN_NORMALITY_SAMPLES: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("field has {got} values, accumulator expects {expected}")]
    GridMismatch { expected: usize, got: usize },
    #[error("need at least {needed} replicas, have {have}")]
    InsufficientReplicas { needed: u64, have: u64 },
    #[error("need at least {needed} distinct positive times, have {have}")]
    InsufficientPoints { needed: usize, have: usize },
    #[error("point index {0} out of range")]
    PointOutOfRange(usize),
    #[error("could not start worker pool: {0}")]
    WorkerPool(String),
    #[error(transparent)]
    Simulation(#[from] SimError),
}

/// Single-pass mean and centered cross-moments over vectors of fixed length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleAccumulator {
    dim: usize,
    count: u64,
    mean: Vec<f64>,
    /// Row-major `dim × dim` sums of centered products.
    comoment: Vec<f64>,
    min: Vec<f64>,
    max: Vec<f64>,
    raw_cap: usize,
    /// `raw[i]` holds the first `raw_cap` values seen at point `i`.
    raw: Vec<Vec<f64>>,
}

impl EnsembleAccumulator {
    pub fn new(dim: usize, raw_cap: usize) -> Self {
        EnsembleAccumulator {
            dim,
            count: 0,
            mean: vec![0.0; dim],
            comoment: vec![0.0; dim * dim],
            min: vec![f64::INFINITY; dim],
            max: vec![f64::NEG_INFINITY; dim],
            raw_cap,
            raw: vec![Vec::new(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    pub fn raw(&self, i: usize) -> &[f64] {
        &self.raw[i]
    }

    pub fn comoment(&self, i: usize, j: usize) -> f64 {
        self.comoment[i * self.dim + j]
    }

    /// Unbiased covariance estimate.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        self.comoment(i, j) / (self.count - 1) as f64
    }

    pub fn push(&mut self, x: &[f64]) -> Result<(), StatsError> {
        if x.len() != self.dim {
            return Err(StatsError::GridMismatch { expected: self.dim, got: x.len() });
        }
        self.count += 1;
        let n = self.count as f64;
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d / n;
        }
        for (row, &di) in self.comoment.chunks_mut(self.dim).zip(&delta) {
            for ((c, &xj), &mj) in row.iter_mut().zip(x).zip(&self.mean) {
                *c += di * (xj - mj);
            }
        }
        for (i, &v) in x.iter().enumerate() {
            self.min[i] = self.min[i].min(v);
            self.max[i] = self.max[i].max(v);
            if self.raw[i].len() < self.raw_cap {
                self.raw[i].push(v);
            }
        }
        Ok(())
    }

    /// Adds the scaled values of one current field.
    pub fn accumulate(&mut self, field: &CurrentField) -> Result<(), StatsError> {
        self.push(&field.scaled)
    }

    /// Pairwise (Chan et al.) combination; `self` comes first in the raw
    /// sample order.
    pub fn merge(&mut self, other: &EnsembleAccumulator) -> Result<(), StatsError> {
        if other.dim != self.dim {
            return Err(StatsError::GridMismatch { expected: self.dim, got: other.dim });
        }
        if other.count == 0 {
            return Ok(());
        }
        if self.count == 0 {
            let cap = self.raw_cap;
            *self = other.clone();
            self.raw_cap = cap;
            for r in &mut self.raw {
                r.truncate(cap);
            }
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        for i in 0..self.dim {
            for j in 0..self.dim {
                self.comoment[i * self.dim + j] += other.comoment[i * self.dim + j] + delta[i] * delta[j] * na * nb / n;
            }
        }
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d * nb / n;
        }
        for i in 0..self.dim {
            self.min[i] = self.min[i].min(other.min[i]);
            self.max[i] = self.max[i].max(other.max[i]);
            let room = self.raw_cap.saturating_sub(self.raw[i].len());
            let take = room.min(other.raw[i].len());
            self.raw[i].extend_from_slice(&other.raw[i][..take]);
        }
        self.count += other.count;
        Ok(())
    }
}

/// Per-batch accumulators plus their ordered merge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchedEnsemble {
    pub batches: Vec<EnsembleAccumulator>,
    pub total: EnsembleAccumulator,
}

impl BatchedEnsemble {
    pub fn from_batches(batches: Vec<EnsembleAccumulator>) -> Result<Self, StatsError> {
        let dim = batches.first().map_or(0, |b| b.dim());
        let cap = batches.first().map_or(DEFAULT_RAW_CAP, |b| b.raw_cap);
        let mut total = EnsembleAccumulator::new(dim, cap);
        for b in &batches {
            total.merge(b)?;
        }
        Ok(BatchedEnsemble { batches, total })
    }

    /// Splits a sample sequence into `batches` contiguous blocks.
    pub fn from_samples(samples: &[Vec<f64>], batches: usize, raw_cap: usize) -> Result<Self, StatsError> {
        let dim = samples.first().map_or(0, |s| s.len());
        let mut accs = Vec::with_capacity(batches);
        for range in batch_ranges(samples.len() as u64, batches) {
            let mut acc = EnsembleAccumulator::new(dim, raw_cap);
            for s in &samples[range.start as usize..range.end as usize] {
                acc.push(s)?;
            }
            accs.push(acc);
        }
        Self::from_batches(accs)
    }

    pub fn count(&self) -> u64 {
        self.total.count()
    }

    /// Covariance with the batch `skip` left out.
    fn covariance_without(&self, skip: usize, i: usize, j: usize) -> f64 {
        let mut acc = EnsembleAccumulator::new(self.total.dim(), 0);
        for (b, batch) in self.batches.iter().enumerate() {
            if b != skip {
                acc.merge(batch).expect("batches share one dimension");
            }
        }
        acc.covariance(i, j)
    }

    /// Delete-one-batch jackknife standard error of `covariance(i, j)`.
    pub fn covariance_jackknife_se(&self, i: usize, j: usize) -> f64 {
        let used: Vec<usize> = (0..self.batches.len()).filter(|&b| self.batches[b].count() > 0).collect();
        let g = used.len() as f64;
        if used.len() < 2 {
            return f64::NAN;
        }
        let leave_out: Vec<f64> = used.iter().map(|&b| self.covariance_without(b, i, j)).collect();
        let mean = leave_out.iter().sum::<f64>() / g;
        ((g - 1.0) / g * leave_out.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt()
    }

    /// All jackknife standard errors at once (`dim × dim`, row-major).
    pub fn covariance_jackknife_matrix(&self) -> Vec<f64> {
        let dim = self.total.dim();
        let used: Vec<usize> = (0..self.batches.len()).filter(|&b| self.batches[b].count() > 0).collect();
        let g = used.len() as f64;
        if used.len() < 2 {
            return vec![f64::NAN; dim * dim];
        }
        let leave_out: Vec<EnsembleAccumulator> = used
            .iter()
            .map(|&skip| {
                let mut acc = EnsembleAccumulator::new(dim, 0);
                for (b, batch) in self.batches.iter().enumerate() {
                    if b != skip {
                        acc.merge(batch).expect("batches share one dimension");
                    }
                }
                acc
            })
            .collect();
        let mut out = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                let vals: Vec<f64> = leave_out.iter().map(|a| a.covariance(i, j)).collect();
                let mean = vals.iter().sum::<f64>() / g;
                out[i * dim + j] = ((g - 1.0) / g * vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt();
            }
        }
        out
    }
}

/// Contiguous replica ranges of near-equal size.
pub fn batch_ranges(replicas: u64, batches: usize) -> Vec<std::ops::Range<u64>> {
    let b = batches.max(1) as u64;
    let (base, extra) = (replicas / b, replicas % b);
    let mut start = 0;
    (0..b)
        .map(|k| {
            let len = base + u64::from(k < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Simulates every replica of a prepared experiment and accumulates the
/// scaled fields batch by batch on `workers` threads.
pub fn run_batched(
    prepared: &PreparedExperiment,
    workers: usize,
    batches: usize,
    raw_cap: usize,
) -> Result<BatchedEnsemble, StatsError> {
    let ranges = batch_ranges(prepared.config().replicas, batches);
    let dim = prepared.config().t_grid.len() * prepared.config().r_grid.len();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| StatsError::WorkerPool(e.to_string()))?;
    let accs: Result<Vec<EnsembleAccumulator>, StatsError> = pool.install(|| {
        ranges
            .par_iter()
            .map(|range| {
                let mut acc = EnsembleAccumulator::new(dim, raw_cap);
                for index in range.clone() {
                    let field =
                        prepared.simulate(index).map_err(|e| SimError::Replica { index, source: Box::new(e) })?;
                    acc.accumulate(&field)?;
                }
                Ok(acc)
            })
            .collect()
    });
    BatchedEnsemble::from_batches(accs?)
}

/// Grid points `(t, r)` in the row-major order used by current fields.
pub fn grid_points(t_grid: &[f64], r_grid: &[f64]) -> Vec<(f64, f64)> {
    t_grid.iter().flat_map(|&t| r_grid.iter().map(move |&r| (t, r))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceRow {
    pub point_a: (f64, f64),
    pub point_b: (f64, f64),
    pub empirical_cov: f64,
    pub analytic_cov: f64,
    pub std_error: f64,
    pub z_score: f64,
}

impl CovarianceRow {
    /// `|empirical − analytic| ≤ max(se_mult·SE, rel·|analytic|)`.
    pub fn within(&self, se_mult: f64, rel: f64) -> bool {
        (self.empirical_cov - self.analytic_cov).abs() <= (se_mult * self.std_error).max(rel * self.analytic_cov.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub count: u64,
    pub rows: Vec<CovarianceRow>,
    pub max_abs_z: f64,
    pub fraction_within_3: f64,
}

impl ComparisonReport {
    fn from_rows(count: u64, rows: Vec<CovarianceRow>) -> Self {
        let max_abs_z = rows.iter().map(|r| r.z_score.abs()).fold(0.0, f64::max);
        let within = rows.iter().filter(|r| r.z_score.abs() <= 3.0).count();
        let fraction_within_3 = if rows.is_empty() { 1.0 } else { within as f64 / rows.len() as f64 };
        ComparisonReport { count, rows, max_abs_z, fraction_within_3 }
    }

    /// Rows whose two points both belong to `points`.
    pub fn restrict(&self, points: &[(f64, f64)]) -> ComparisonReport {
        let rows =
            self.rows.iter().filter(|r| points.contains(&r.point_a) && points.contains(&r.point_b)).cloned().collect();
        Self::from_rows(self.count, rows)
    }
}

/// Empirical covariances of the accumulated fields against the limit
/// covariance, one row per unordered pair of points.
pub fn covariance_report(
    ens: &BatchedEnsemble,
    points: &[(f64, f64)],
    params: &LimitCovariance,
) -> Result<ComparisonReport, StatsError> {
    if ens.count() < MIN_REPORT_COUNT {
        return Err(StatsError::InsufficientReplicas { needed: MIN_REPORT_COUNT, have: ens.count() });
    }
    let dim = ens.total.dim();
    if points.len() != dim {
        return Err(StatsError::GridMismatch { expected: dim, got: points.len() });
    }
    let se = ens.covariance_jackknife_matrix();
    let mut rows = Vec::new();
    for i in 0..dim {
        for j in i..dim {
            let empirical_cov = ens.total.covariance(i, j);
            let analytic_cov = limit_cov(params, points[i], points[j]);
            let std_error = se[i * dim + j];
            let diff = empirical_cov - analytic_cov;
            let z_score = if std_error > 0.0 {
                diff / std_error
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            rows.push(CovarianceRow {
                point_a: points[i],
                point_b: points[j],
                empirical_cov,
                analytic_cov,
                std_error,
                z_score,
            });
        }
    }
    Ok(ComparisonReport::from_rows(ens.count(), rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub point: (f64, f64),
    pub mean: f64,
    pub std_error: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanReport {
    pub count: u64,
    pub rows: Vec<MeanRow>,
    pub max_ratio: f64,
}

/// `|mean| / SE` per point for the null hypothesis of a centered field.
/// Points with zero spread and zero mean report ratio 0.
pub fn mean_report(acc: &EnsembleAccumulator, points: &[(f64, f64)]) -> Result<MeanReport, StatsError> {
    if acc.count() < MIN_REPORT_COUNT {
        return Err(StatsError::InsufficientReplicas { needed: MIN_REPORT_COUNT, have: acc.count() });
    }
    if points.len() != acc.dim() {
        return Err(StatsError::GridMismatch { expected: acc.dim(), got: points.len() });
    }
    let n = acc.count() as f64;
    let rows: Vec<MeanRow> = (0..acc.dim())
        .map(|i| {
            let mean = acc.mean()[i];
            let std_error = (acc.covariance(i, i).max(0.0) / n).sqrt();
            let ratio = if std_error > 0.0 {
                mean.abs() / std_error
            } else if mean == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            MeanRow { point: points[i], mean, std_error, ratio }
        })
        .collect();
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(MeanReport { count: acc.count(), rows, max_ratio })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub std_error: f64,
}

/// Least-squares slope of `log variance` against `log t`.
pub fn scaling_exponent_of(times: &[f64], variances: &[f64]) -> Result<ScalingFit, StatsError> {
    let pairs: Vec<(f64, f64)> =
        times.iter().zip(variances).filter(|(t, v)| **t > 0.0 && **v > 0.0).map(|(t, v)| (t.ln(), v.ln())).collect();
    let mut distinct: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(StatsError::InsufficientPoints { needed: 4, have: distinct.len() });
    }
    let k = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let ssr: f64 = pairs.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum();
    let std_error = (ssr / (k - 2.0) / sxx).sqrt();
    Ok(ScalingFit { slope, std_error })
}

/// Scaling fit from accumulated variances at the given point indices.
pub fn scaling_exponent(acc: &EnsembleAccumulator, indices: &[usize], times: &[f64]) -> Result<ScalingFit, StatsError> {
    if acc.count() < MIN_SCALING_COUNT {
        return Err(StatsError::InsufficientReplicas { needed: MIN_SCALING_COUNT, have: acc.count() });
    }
    let mut variances = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= acc.dim() {
            return Err(StatsError::PointOutOfRange(i));
        }
        variances.push(acc.covariance(i, i));
    }
    scaling_exponent_of(times, &variances)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityReport {
    pub samples: usize,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub ks_statistic: f64,
    pub ks_p: f64,
}

/// Sample skewness, excess kurtosis and a KS test against
/// `Normal(0, variance)`. With `lattice_step` set, the samples are taken to
/// live on `step·ℤ` and are compared with the discretized normal law.
pub fn normality_diagnostics(
    samples: &[f64],
    variance: f64,
    lattice_step: Option<f64>,
) -> Result<NormalityReport, StatsError> {
    if samples.len() < MIN_NORMALITY_SAMPLES {
        return Err(StatsError::InsufficientReplicas {
            needed: MIN_NORMALITY_SAMPLES as u64,
            have: samples.len() as u64,
        });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in samples {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let (m2, m3, m4) = (m2 / n, m3 / n, m4 / n);
    let skewness = m3 / m2.powf(1.5);
    let excess_kurtosis = m4 / (m2 * m2) - 3.0;
    let cdf = |x: f64| normal_cdf(variance, x);
    let ks = match lattice_step {
        Some(h) => ks_lattice(samples, h, cdf),
        None => ks_one_sample(samples, cdf),
    };
    Ok(NormalityReport {
        samples: samples.len(),
        skewness,
        excess_kurtosis,
        ks_statistic: ks.statistic,
        ks_p: ks.p_value,
    })
}
