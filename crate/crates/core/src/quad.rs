//! Globally adaptive Gauss–Kronrod (10/21 point) quadrature on finite
//! intervals.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use thiserror::Error;

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Gauss weights at the odd-indexed Kronrod nodes.
#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

const MAX_INTERVALS: usize = 4000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadError {
    #[error("quadrature did not reach tolerance {tol:e} on [{a}, {b}] (estimate {value}, error {error:e})")]
    NonConvergent { a: f64, b: f64, tol: f64, value: f64, error: f64 },
    #[error("integrand returned a non-finite value at {x}")]
    NonFinite { x: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

/// One 21-point Kronrod application: `(kronrod, error estimate)`, with the
/// error scaled as in QUADPACK's `qk21`.
pub fn gk21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    let mut kronrod = fc * WGK[10];
    let mut resabs = fc.abs() * WGK[10];
    let mut gauss = 0.0;
    for (j, (&x, &w)) in XGK[..10].iter().zip(&WGK[..10]).enumerate() {
        let dx = half * x;
        fv1[j] = f(center - dx);
        fv2[j] = f(center + dx);
        let s = fv1[j] + fv2[j];
        kronrod += w * s;
        resabs += w * (fv1[j].abs() + fv2[j].abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    let mean = kronrod * 0.5;
    let mut resasc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        resasc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let habs = half.abs();
    resabs *= habs;
    resasc *= habs;
    let mut err = ((kronrod - gauss) * half).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    (kronrod * half, err)
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

/// Integrates `f` over `[a, b]` until the summed Kronrod error estimate is
/// below the absolute tolerance `abs_tol`. Reversed limits negate the result.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, abs_tol: f64) -> Result<Quadrature, QuadError> {
    if a == b {
        return Ok(Quadrature { value: 0.0, error: 0.0, evaluations: 0 });
    }
    if b < a {
        let q = integrate(f, b, a, abs_tol)?;
        return Ok(Quadrature { value: -q.value, ..q });
    }
    let mut evaluations = 0usize;
    let eval = |lo: f64, hi: f64, f: &mut F, evaluations: &mut usize| -> Result<Segment, QuadError> {
        let mut bad = None;
        let (value, error) = gk21(
            &mut |x| {
                *evaluations += 1;
                let y = f(x);
                if !y.is_finite() && bad.is_none() {
                    bad = Some(x);
                }
                y
            },
            lo,
            hi,
        );
        if let Some(x) = bad {
            return Err(QuadError::NonFinite { x });
        }
        Ok(Segment { a: lo, b: hi, value, error })
    };

    let mut heap = BinaryHeap::new();
    let first = eval(a, b, &mut f, &mut evaluations)?;
    let mut total = first.value;
    let mut total_err = first.error;
    heap.push(first);
    while total_err > abs_tol {
        if heap.len() >= MAX_INTERVALS {
            return Err(QuadError::NonConvergent { a, b, tol: abs_tol, value: total, error: total_err });
        }
        let worst = heap.pop().expect("heap is nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval exhausted at machine resolution
            return Err(QuadError::NonConvergent { a, b, tol: abs_tol, value: total, error: total_err });
        }
        let left = eval(worst.a, mid, &mut f, &mut evaluations)?;
        let right = eval(mid, worst.b, &mut f, &mut evaluations)?;
        total += left.value + right.value - worst.value;
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        if total_err <= abs_tol {
            // re-sum from scratch to shed accumulated rounding in the running totals
            total = heap.iter().map(|s| s.value).sum();
            total_err = heap.iter().map(|s| s.error).sum();
        }
    }
    total = heap.iter().map(|s| s.value).sum();
    Ok(Quadrature { value: total, error: total_err, evaluations })
}

/// Integrates over consecutive breakpoints, sharing the tolerance in
/// proportion to the piece lengths.
pub fn integrate_pieces<F: FnMut(f64) -> f64>(mut f: F, breaks: &[f64], abs_tol: f64) -> Result<Quadrature, QuadError> {
    let span = breaks.last().copied().unwrap_or(0.0) - breaks.first().copied().unwrap_or(0.0);
    let mut out = Quadrature { value: 0.0, error: 0.0, evaluations: 0 };
    for w in breaks.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let share = if span > 0.0 { abs_tol * (w[1] - w[0]) / span } else { abs_tol };
        let q = integrate(&mut f, w[0], w[1], share)?;
        out.value += q.value;
        out.error += q.error;
        out.evaluations += q.evaluations;
    }
    Ok(out)
}
