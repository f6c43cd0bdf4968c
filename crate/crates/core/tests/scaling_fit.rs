use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spellbee_core::scaling::{compute_advantage, fit_shifted_power_law, FitSpace, ScalingFit, ScalingPoint};

fn curve(a: f64, b: f64, c: f64, noise: f64, seed: u64) -> Vec<ScalingPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..=12)
        .map(|i| {
            let flops = 10f64.powf(0.5 * i as f64);
            let eps: f64 = if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
            ScalingPoint { flops, test_loss: (a * flops.powf(-b) + c) * (1.0 + eps), variant: "baseline".into() }
        })
        .collect()
}

#[test]
fn noiseless_recovery() {
    let f = fit_shifted_power_law(&curve(2.0, 0.3, 1.5, 0.0, 0), FitSpace::Raw).unwrap();
    assert!((f.a - 2.0).abs() <= 1e-3, "{f:?}");
    assert!((f.b - 0.3).abs() <= 1e-3, "{f:?}");
    assert!((f.c - 1.5).abs() <= 1e-3, "{f:?}");
    assert!(f.residual < 1e-6 && !f.degenerate);
}

#[test]
fn realistic_flop_scale() {
    // Same curve shape at 1e15..1e21 FLOPs.
    let pts: Vec<ScalingPoint> = (0..8)
        .map(|i| {
            let flops = 1e15 * 10f64.powf(0.8 * i as f64);
            ScalingPoint { flops, test_loss: 3e4 * flops.powf(-0.25) + 2.0, variant: "bee".into() }
        })
        .collect();
    let f = fit_shifted_power_law(&pts, FitSpace::Raw).unwrap();
    assert!((f.b - 0.25).abs() < 1e-3 && (f.c - 2.0).abs() < 1e-3 && (f.a / 3e4 - 1.0).abs() < 1e-2, "{f:?}");
}

#[test]
fn noisy_exponent_within_tolerance() {
    for seed in 0..20 {
        let f = fit_shifted_power_law(&curve(2.0, 0.3, 1.5, 0.01, seed), FitSpace::Raw).unwrap();
        assert!((f.b - 0.3).abs() <= 0.05, "seed {seed}: {f:?}");
    }
}

#[test]
fn closed_form_advantage() {
    let fit = ScalingFit { a: 1.0, b: 0.5, c: 0.0, residual: 0.0, degenerate: false, space: FitSpace::Raw };
    assert!((fit.flops_for_loss(0.09).unwrap() - 123.4568).abs() < 1e-4);
    let adv = compute_advantage(&fit, 0.09, 100.0).unwrap();
    assert!((adv - 0.19).abs() <= 0.001, "{adv}");
}

proptest! {
    #[test]
    fn advantage_self_consistent_and_monotone(a in 0.1f64..10.0, b in 0.05f64..1.5, c in 0.0f64..3.0, lc in 0.0f64..8.0) {
        let fit = ScalingFit { a, b, c, residual: 0.0, degenerate: false, space: FitSpace::Raw };
        let flops = 10f64.powf(lc);
        let at = fit.predict(flops);
        // Keep the gap to the floor above rounding noise.
        prop_assume!(at - c > 1e-3 * c.max(1.0));
        prop_assert!(compute_advantage(&fit, at, flops).unwrap().abs() < 1e-9);
        let lower = c + (at - c) * 0.9;
        prop_assert!(compute_advantage(&fit, lower, flops).unwrap() > 0.0);
    }
}
