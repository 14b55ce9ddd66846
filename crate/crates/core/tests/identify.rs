mod common;

use cellmech::identify::*;
use cellmech::material::{elastic_coefficient, Preset, RateCoefficients, SpeedState};
use rand::{rngs::StdRng, SeedableRng};
use rand_distr::{Distribution, Normal};

const GRID: [f64; 6] = [0.40, 0.45, 0.50, 0.55, 0.60, 0.65];

#[test]
fn calibration_recovers_c1_without_noise() {
    let truth = common::fixed(0.2e6);
    let curve = common::synthetic_curve(&truth, &GRID);
    assert_eq!(curve.len(), GRID.len());
    let fit = calibrate_c1(&curve, &common::fixed(0.1e6), DEFAULT_BRACKET).unwrap();
    assert!((fit.c1 / 0.2e6 - 1.0).abs() < 1e-3, "c1 = {}", fit.c1);
    assert!(fit.residual < 1e-3 * curve[0].force);
}

#[test]
fn calibration_tolerates_force_noise() {
    let truth = common::fixed(0.2e6);
    let clean = common::synthetic_curve(&truth, &GRID);
    let template = common::fixed(0.1e6);
    let mut model = ForwardModel::new(&template);
    for seed in 0..5 {
        let mut rng = StdRng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.02).unwrap();
        let noisy: Vec<_> = clean
            .iter()
            .map(|p| MeasuredPoint { force: p.force * (1.0 + noise.sample(&mut rng)), ..*p })
            .collect();
        let fit = calibrate_with(&mut model, &noisy, DEFAULT_BRACKET).unwrap();
        assert!((fit.c1 / 0.2e6 - 1.0).abs() < 0.05, "seed {seed}: c1 = {}", fit.c1);
    }
}

#[test]
fn calibration_flags_minimum_at_bracket_edge() {
    let curve = common::synthetic_curve(&common::fixed(0.2e6), &GRID[..3]);
    assert!(calibrate_c1(&curve, &common::fixed(0.1e6), (0.5e6, 1.0e6)).is_err());
}

/// Curves for a rate-dependent material, each generated by direct solves at its own speed.
fn experiment_curve(coeffs: &RateCoefficients, speed: SpeedState) -> Vec<MeasuredPoint> {
    let mut setup = common::fixed(elastic_coefficient(speed, coeffs).unwrap());
    setup.rho0 = 50e-6;
    common::synthetic_curve(&setup, &GRID)
}

#[test]
fn rate_model_round_trip() {
    let truth = Preset::ExpVb.coefficients();
    let constant: Vec<_> = [0.2, 0.6, 1.0, 2.0]
        .into_iter()
        .map(|v| ConstantVelocityExperiment { v, curve: experiment_curve(&truth, SpeedState { v, a: 0.0 }) })
        .collect();
    let accelerated: Vec<_> = [1.0, 4.0, 10.0]
        .into_iter()
        .map(|a| AcceleratedExperiment {
            a,
            v_at_puncture: 1.0,
            curve: experiment_curve(&truth, SpeedState { v: 1.0, a }),
        })
        .collect();
    let mut template = common::fixed(0.1e6);
    template.rho0 = 50e-6;
    let fit = build_rate_model(&constant, &accelerated, &template, DEFAULT_BRACKET).unwrap();

    // Constant-velocity runs already carry the a = 0 factor g0 + 1/g1, so the
    // identified velocity polynomial absorbs it and epsilon is relative to a = 0.
    let base = truth.acceleration_factor(0.0);
    let k = fit.coefficients.k_mpa();
    for (got, want) in k.iter().zip(truth.k_mpa()) {
        assert!((got / (want * base) - 1.0).abs() < 0.02, "k: {k:?}");
    }
    for a in [1.0, 4.0, 10.0] {
        let want = truth.acceleration_factor(a) / base;
        assert!((fit.acceleration.eval(a) / want - 1.0).abs() < 0.02);
    }
    let c_fit = elastic_coefficient(SpeedState { v: 1.5, a: 2.0 }, &fit.coefficients).unwrap();
    let c_true = elastic_coefficient(SpeedState { v: 1.5, a: 2.0 }, &truth).unwrap();
    assert!((c_fit / c_true - 1.0).abs() < 0.02);
}
