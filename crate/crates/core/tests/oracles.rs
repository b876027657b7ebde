mod common;

use proptest::prelude::*;
use skeda::detect::{binomial_tail, detection_threshold};
use skeda::normal_ppf;

#[test]
fn ppf_matches_bisection_oracle() {
    // log-spaced in the tails, linear in the middle
    let mut points = Vec::new();
    for i in 0..5_000 {
        let lp = -8.0 + 8.0 * i as f64 / 5_000.0 * (1.0 - 0.30103 / 8.0);
        let p = 10f64.powf(lp);
        points.push(p);
        points.push(1.0 - p);
    }
    let mut worst: f64 = 0.0;
    for &p in &points {
        let p = p.clamp(1e-8, 1.0 - 1e-8);
        worst = worst.max((normal_ppf(p).unwrap() - common::ppf_bisect(p)).abs());
    }
    assert_eq!(points.len(), 10_000);
    assert!(worst < 1e-9, "max abs error {worst:e}");
}

#[test]
fn ppf_frozen_values() {
    // high-precision reference quantiles
    let cases = [
        (0.975, 1.959_963_984_540_054),
        (0.25, -0.674_489_750_196_081_7),
        (1e-8, -5.612_001_244_174_789),
        (0.841_344_746_068_542_9, 1.0),
    ];
    for (p, x) in cases {
        assert!((normal_ppf(p).unwrap() - x).abs() < 1e-9, "p={p}");
    }
}

#[test]
fn oracle_cdf_inverts_ppf() {
    for p in [1e-6, 0.01, 0.3, 0.5, 0.77, 0.999] {
        assert!((common::normal_cdf(normal_ppf(p).unwrap()) - p).abs() < 1e-12 * p.max(1e-3) * 1e3);
    }
}

#[test]
fn threshold_256_is_pinned() {
    assert_eq!(common::threshold_exact(256, 1e-6), 167);
    assert_eq!(detection_threshold(256, 1e-6).unwrap(), 167);
    let at = binomial_tail(256, 167, 0.5).unwrap();
    let below = binomial_tail(256, 166, 0.5).unwrap();
    assert!((at - 6.222_893_350_770_525e-7).abs() < 1e-15);
    assert!((below - 1.176_097_998_537_511e-6).abs() < 1e-15);
}

#[test]
fn tail_matches_exact_oracle() {
    for (a, b) in [(1u64, 2u64), (1, 4), (7, 10)] {
        let p = a as f64 / b as f64;
        for n in [1u64, 10, 64, 256, 1000] {
            for k in [0, 1, n / 4, n / 2, 3 * n / 4, n] {
                let exact = common::binomial_tail_exact(n, k, a, b);
                let ours = binomial_tail(n, k, p).unwrap();
                let rel = if exact == 0.0 { ours } else { (ours - exact).abs() / exact };
                assert!(rel < 1e-6, "n={n} k={k} p={p}: {ours:e} vs {exact:e}");
            }
        }
    }
}

#[test]
fn deep_tail_stays_tiny() {
    let t = binomial_tail(1024, 512, 0.2).unwrap();
    assert!(t < 1e-80 && t >= 0.0);
    let exact = common::binomial_tail_exact(1024, 512, 1, 5);
    assert!(((t - exact) / exact).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn threshold_brackets_fpr(n in 1u64..600, e in 1.0f64..9.0) {
        let fpr = 10f64.powf(-e);
        let k = detection_threshold(n, fpr).unwrap();
        if k <= n {
            prop_assert!(binomial_tail(n, k, 0.5).unwrap() <= fpr);
        }
        if k >= 1 && k <= n + 1 {
            prop_assert!(binomial_tail(n, k - 1, 0.5).unwrap() > fpr);
        }
    }
}
