//! Test-only reference computations, independent of the library code paths.
#![allow(dead_code)]

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;

/// erf(z) for z >= 0 by the positive-term series
/// `erf(z) = 2/√π · e^{-z²} · Σ 2ⁿ z^{2n+1} / (1·3·…·(2n+1))`.
fn erf_series(z: f64) -> f64 {
    let mut term = z;
    let mut sum = z;
    let mut n = 0.0;
    loop {
        n += 1.0;
        term *= 2.0 * z * z / (2.0 * n + 1.0);
        sum += term;
        if term <= sum * 1e-18 {
            break;
        }
    }
    FRAC_2_SQRT_PI * (-z * z).exp() * sum
}

/// erfc(z) for z >= 2 by the Laplace continued fraction, modified Lentz.
fn erfc_cf(z: f64) -> f64 {
    // erfc(z) = e^{-z²}/√π · 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + …))))
    let tiny = 1e-300;
    let mut f = z;
    let mut c = z;
    let mut d = 0.0;
    for k in 1..5000 {
        let a = k as f64 / 2.0;
        d = z + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = z + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    (-z * z).exp() / std::f64::consts::PI.sqrt() / f
}

/// Lower tail Φ(x) for x <= 0 with full relative precision.
fn lower_tail(x: f64) -> f64 {
    let z = -x / std::f64::consts::SQRT_2;
    if z < 2.0 {
        0.5 * (1.0 - erf_series(z))
    } else {
        0.5 * erfc_cf(z)
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        lower_tail(x)
    } else {
        1.0 - lower_tail(-x)
    }
}

/// Φ⁻¹(p) by bisection on the reference CDF.
pub fn ppf_bisect(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0);
    if p > 0.5 {
        return -ppf_bisect(1.0 - p);
    }
    let (mut lo, mut hi) = (-40.0f64, 0.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if lower_tail(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn big_ratio_to_f64(num: &BigUint, den: &BigUint) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    let e = num.bits() as i64 - den.bits() as i64;
    let shift = 80 - e;
    let q = if shift >= 0 {
        (num << shift as usize) / den
    } else {
        num / (den << (-shift) as usize)
    };
    q.to_f64().unwrap() * 2f64.powi(-(shift as i32))
}

/// Exact `P(Binomial(n, a/b) ≥ k)` with big integers.
pub fn binomial_tail_exact(n: u64, k: u64, a: u64, b: u64) -> f64 {
    let a_big = BigUint::from(a);
    let rest = BigUint::from(b - a);
    let mut num = BigUint::zero();
    let mut binom = BigUint::one();
    for i in 0..=n {
        if i >= k {
            num += &binom * a_big.pow(i as u32) * rest.pow((n - i) as u32);
        }
        binom = binom * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    big_ratio_to_f64(&num, &BigUint::from(b).pow(n as u32))
}

/// Smallest k with exact tail at ½ ≤ fpr (n + 1 if none).
pub fn threshold_exact(n: u64, fpr: f64) -> u64 {
    (0..=n).find(|&k| binomial_tail_exact(n, k, 1, 2) <= fpr).unwrap_or(n + 1)
}
