use approx::assert_relative_eq;
use gmwm::model::ProcessKind::{self, *};
use gmwm::*;
use proptest::prelude::*;

fn tau_wv(kind: ProcessKind, params: &[f64], tau: u64) -> f64 {
    theoretical_wv_block(kind, params, tau).unwrap()
}

#[test]
fn block_values_at_small_scales() {
    assert_relative_eq!(tau_wv(WhiteNoise, &[1.0], 2), 0.5, max_relative = 1e-14);
    assert_relative_eq!(tau_wv(WhiteNoise, &[1.0], 4), 0.25, max_relative = 1e-14);
    assert_relative_eq!(tau_wv(Quantization, &[1.0], 2), 1.5, max_relative = 1e-14);
    assert_relative_eq!(tau_wv(RandomWalk, &[1.0], 2), 0.25, max_relative = 1e-14);
    assert_relative_eq!(tau_wv(RandomWalk, &[1.0], 4), 18.0 / 48.0, max_relative = 1e-14);
    assert_relative_eq!(tau_wv(Drift, &[1.0], 2), 0.25, max_relative = 1e-14);
    assert_relative_eq!(tau_wv(Drift, &[1.0], 4), 1.0, max_relative = 1e-14);
    assert_relative_eq!(
        tau_wv(Sinusoid, &[1.0, std::f64::consts::FRAC_PI_2], 2),
        0.25,
        max_relative = 1e-14
    );
    assert!(tau_wv(Sinusoid, &[1.0, std::f64::consts::FRAC_PI_2], 8).abs() < 1e-15);
}

#[test]
fn composite_is_sum_of_blocks() {
    let model: ModelSpec = "WN,QN,AR1,DR,RW,SIN".parse().unwrap();
    let theta: ParamVector = vec![0.7, 0.2, 0.9, 0.3, 0.01, 1e-3, 0.4, 1.2].into();
    let scales = ScaleSet::new(10).unwrap();
    let total = model_wv(&model, &theta, &scales).unwrap();
    for (j, tau) in scales.taus().into_iter().enumerate() {
        let sum: f64 = model
            .layout()
            .map(|(kind, range)| tau_wv(kind, &theta.values()[range], tau))
            .sum();
        assert_relative_eq!(total[j], sum, max_relative = 1e-14);
    }
}

/// Direct phase average of the coefficient variance over a uniform grid.
#[test]
fn sinusoid_matches_phase_average() {
    let (alpha, beta) = (1.7, 0.83);
    let grid = 10_000;
    for tau in [2u64, 4, 8, 16, 32] {
        let half = (tau / 2) as i64;
        let mut acc = 0.0;
        for g in 0..grid {
            let u = 2.0 * std::f64::consts::PI * g as f64 / grid as f64;
            let x = |t: i64| alpha * (beta * t as f64 + u).sin();
            let first: f64 = (1..=half).map(x).sum();
            let second: f64 = (half + 1..=2 * half).map(x).sum();
            let w = (second - first) / tau as f64;
            acc += w * w;
        }
        let avg = acc / grid as f64;
        assert!((tau_wv(Sinusoid, &[alpha, beta], tau) - avg).abs() < 1e-8, "tau {tau}");
    }
}

#[test]
fn sinusoid_scales_with_amplitude_squared() {
    for tau in [2u64, 16, 256] {
        let one = tau_wv(Sinusoid, &[1.0, 0.4], tau);
        assert_relative_eq!(tau_wv(Sinusoid, &[3.0, 0.4], tau), 9.0 * one, max_relative = 1e-13);
    }
}

#[test]
fn ar1_is_continuous_through_zero() {
    for tau in [2u64, 8, 1024] {
        let zero = tau_wv(Ar1, &[0.0, 2.0], tau);
        assert_relative_eq!(zero, tau_wv(WhiteNoise, &[2.0], tau), max_relative = 1e-14);
        for phi in [1e-6, -1e-6] {
            let v = tau_wv(Ar1, &[phi, 2.0], tau);
            assert!((v - zero).abs() <= 1e-5 * zero, "tau {tau} phi {phi}");
        }
    }
}

fn full_theta() -> impl Strategy<Value = Vec<f64>> {
    (
        1e-8..1e3f64,
        1e-8..1e3f64,
        -0.999..0.999f64,
        1e-8..1e3f64,
        1e-8..1e2f64,
        1e-10..1e2f64,
        1e-6..1e3f64,
        1e-3..3.1f64,
    )
        .prop_map(|(a, b, c, d, e, f, g, h)| vec![a, b, c, d, e, f, g, h])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn transform_round_trips(theta in full_theta()) {
        let model: ModelSpec = "WN,QN,AR1,DR,RW,SIN".parse().unwrap();
        let t = Transform::default();
        let x = t.to_unconstrained(&model, &theta.clone().into()).unwrap();
        let back = t.from_unconstrained(&model, &x).unwrap();
        for (a, b) in theta.iter().zip(back.values()) {
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}
