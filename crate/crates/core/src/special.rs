//! Gaussian special functions: densities, distribution functions with
//! accurate tails, the `Ψ` building block and the bivariate normal
//! orthant probability.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// `sqrt(2π)`.
pub const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

#[inline]
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

/// `P(N ≤ z)` for a standard normal, accurate to full relative precision in
/// the lower tail.
#[inline]
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// `P(N > z)`, accurate in the upper tail.
#[inline]
pub fn std_normal_sf(z: f64) -> f64 {
    0.5 * erfc(z * FRAC_1_SQRT_2)
}

/// Density of `Normal(0, var)` at `x`. Zero variance is not a density and
/// returns 0 off the origin and `+∞` at it.
pub fn normal_pdf(var: f64, x: f64) -> f64 {
    if var <= 0.0 {
        return if x == 0.0 { f64::INFINITY } else { 0.0 };
    }
    let sd = var.sqrt();
    std_normal_pdf(x / sd) / sd
}

/// `Φ_{var}(x) = P(N ≤ x)` for `N ~ Normal(0, var)`; a point mass at zero
/// when `var == 0`.
pub fn normal_cdf(var: f64, x: f64) -> f64 {
    if var <= 0.0 {
        return if x >= 0.0 { 1.0 } else { 0.0 };
    }
    std_normal_cdf(x / var.sqrt())
}

/// `1 − Φ_{var}(x)` computed without cancellation.
pub fn normal_sf(var: f64, x: f64) -> f64 {
    if var <= 0.0 {
        return if x >= 0.0 { 0.0 } else { 1.0 };
    }
    std_normal_sf(x / var.sqrt())
}

/// `Ψ_{σ²}(x) = σ²φ_{σ²}(x) − x(1 − Φ_{σ²}(x))`, which equals `E(N − x)^+`
/// for `N ~ Normal(0, σ²)`. At `σ² = 0` this is the pointwise limit, 0 for
/// every `x ≥ 0`.
pub fn psi(sigma2: f64, x: f64) -> f64 {
    if sigma2 <= 0.0 {
        return (-x).max(0.0);
    }
    let sd = sigma2.sqrt();
    let z = x / sd;
    let v = sd * (std_normal_pdf(z) - z * std_normal_sf(z));
    v.max(0.0)
}

/// Gauss–Legendre half-rules used by the bivariate normal integrator.
const BVN_W6: [f64; 3] = [0.171_324_492_379_170_5, 0.360_761_573_048_138_4, 0.467_913_934_572_690_4];
const BVN_X6: [f64; 3] = [0.932_469_514_203_152_2, 0.661_209_386_466_264_7, 0.238_619_186_083_197];
const BVN_W12: [f64; 6] = [
    0.047_175_336_386_511_77,
    0.106_939_325_995_318_3,
    0.160_078_328_543_346_4,
    0.203_167_426_723_065_9,
    0.233_492_536_538_354_7,
    0.249_147_045_813_402_9,
];
const BVN_X12: [f64; 6] = [
    0.981_560_634_246_719_1,
    0.904_117_256_370_475,
    0.769_902_674_194_305,
    0.587_317_954_286_617_1,
    0.367_831_498_998_180_2,
    0.125_233_408_511_469_2,
];
const BVN_W20: [f64; 10] = [
    0.017_614_007_139_152_12,
    0.040_601_429_800_386_94,
    0.062_672_048_334_109_06,
    0.083_276_741_576_704_75,
    0.101_930_119_817_240_4,
    0.118_194_531_961_518_4,
    0.131_688_638_449_176_6,
    0.142_096_109_318_382_1,
    0.149_172_986_472_603_7,
    0.152_753_387_130_725_9,
];
#[allow(clippy::excessive_precision)]
const BVN_X20: [f64; 10] = [
    0.993_128_599_185_094_9,
    0.963_971_927_277_913_8,
    0.912_234_428_251_325_9,
    0.839_116_971_822_218_8,
    0.746_331_906_460_150_8,
    0.636_053_680_726_515,
    0.510_867_001_950_827_1,
    0.373_706_088_715_419_6,
    0.227_785_851_141_645_1,
    0.076_526_521_133_497_33,
];

/// Upper orthant probability `P(X > h, Y > k)` for a standard bivariate
/// normal with correlation `r`, following Genz's refinement of the
/// Drezner–Wesolowsky method (double precision accuracy).
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY { 1.0 } else { std_normal_sf(k) };
    }
    if k == f64::NEG_INFINITY {
        return std_normal_sf(h);
    }
    let r = r.clamp(-1.0, 1.0);
    let (w, x): (&[f64], &[f64]) = if r.abs() < 0.3 {
        (&BVN_W6, &BVN_X6)
    } else if r.abs() < 0.75 {
        (&BVN_W12, &BVN_X12)
    } else {
        (&BVN_W20, &BVN_X20)
    };
    // Nodes mapped to (0, 2): 1 - x and 1 + x, each with weight w.
    let nodes = || x.iter().zip(w).flat_map(|(&xi, &wi)| [(1.0 - xi, wi), (1.0 + xi, wi)]);

    let hh = h;
    let mut kk = k;
    let mut hk = hh * kk;
    let mut bvn;
    if r.abs() < 0.925 {
        let hs = (hh * hh + kk * kk) / 2.0;
        let asr = r.asin() / 2.0;
        let sum: f64 = nodes()
            .map(|(xs, ws)| {
                let sn = (asr * xs).sin();
                ((sn * hk - hs) / (1.0 - sn * sn)).exp() * ws
            })
            .sum();
        bvn = sum * asr / (2.0 * PI) + std_normal_sf(hh) * std_normal_sf(kk);
    } else {
        if r < 0.0 {
            kk = -kk;
            hk = -hk;
        }
        bvn = 0.0;
        if r.abs() < 1.0 {
            let as_ = 1.0 - r * r;
            let mut a = as_.sqrt();
            let bs = (hh - kk) * (hh - kk);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 80.0;
            let asr = -(bs / as_ + hk) / 2.0;
            if asr > -100.0 {
                bvn = a * asr.exp() * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_);
            }
            if hk > -100.0 {
                let b = bs.sqrt();
                let sp = SQRT_2PI * std_normal_sf(b / a);
                bvn -= (-hk / 2.0).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
            }
            a /= 2.0;
            let sum: f64 = nodes()
                .filter_map(|(xs, ws)| {
                    let xs2 = (a * xs) * (a * xs);
                    let asr = -(bs / xs2 + hk) / 2.0;
                    if asr <= -100.0 {
                        return None;
                    }
                    let rs = (1.0 - xs2).sqrt();
                    let sp = 1.0 + c * xs2 * (1.0 + 5.0 * d * xs2);
                    let ep = (-(hk / 2.0) * xs2 / ((1.0 + rs) * (1.0 + rs))).exp() / rs;
                    Some(asr.exp() * (sp - ep) * ws)
                })
                .sum();
            bvn = (a * sum - bvn) / (2.0 * PI);
        }
        if r > 0.0 {
            bvn += std_normal_sf(hh.max(kk));
        } else if hh >= kk {
            bvn = -bvn;
        } else {
            let l =
                if hh < 0.0 { std_normal_cdf(kk) - std_normal_cdf(hh) } else { std_normal_sf(hh) - std_normal_sf(kk) };
            bvn = l - bvn;
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// Lower orthant probability `P(X ≤ h, Y ≤ k)` for a standard bivariate
/// normal with correlation `r`.
pub fn bvn_cdf(h: f64, k: f64, r: f64) -> f64 {
    bvn_upper(-h, -k, r)
}

/// `log(1 + e^a)` without overflow.
#[inline]
pub fn log1p_exp(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

/// `log Σ exp(v_i)` over a slice, `-∞` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
