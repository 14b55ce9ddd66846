use cellmech::trace::*;
use rand::{rngs::StdRng, SeedableRng};
use rand_distr::{Distribution, Normal};

const FS: f64 = 1000.0;

/// Baseline until 1 s, linear rise to `peak` mN at 1.5 s, then an instant drop.
fn ramp(peak: f64, sigma: f64, seed: u64) -> ForceTrace {
    let mut rng = StdRng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma.max(1e-300)).unwrap();
    let t: Vec<f64> = (0..3000).map(|i| i as f64 / FS).collect();
    let f = t
        .iter()
        .map(|&x| {
            let clean = if (1.0..=1.5).contains(&x) { peak * (x - 1.0) / 0.5 } else { 0.0 };
            clean + if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 }
        })
        .collect();
    ForceTrace::from_force(t, f).unwrap()
}

fn within(t: f64, target: f64, samples: f64) -> bool {
    (t - target).abs() <= samples / FS + 1e-9
}

#[test]
fn noisy_ramp_markers() {
    for seed in 0..20 {
        let tr = ramp(0.5, 1e-3, seed);
        let m = detect_phases(&tr, DEFAULT_NOISE_WINDOW).unwrap();
        assert!(within(m.t_contact, 1.0, 2.0), "seed {seed}: {m:?}");
        assert!(within(m.t_puncture, 1.5, 2.0), "seed {seed}: {m:?}");
        assert!(m.t_contact < m.t_puncture && m.t_puncture <= m.t_relax_end && m.t_relax_end <= m.t_retract);
    }
}

#[test]
fn filtered_ramp_markers() {
    for seed in 0..20 {
        let tr = lowpass_filter(&ramp(0.5, 1e-3, seed), DEFAULT_CUTOFF).unwrap();
        let m = detect_phases(&tr, DEFAULT_NOISE_WINDOW).unwrap();
        assert!(within(m.t_contact, 1.0, 2.0), "seed {seed}: {m:?}");
        assert!(within(m.t_puncture, 1.5, 2.0), "seed {seed}: {m:?}");
    }
}

#[test]
fn filtering_does_not_move_markers() {
    // A noise-free trace needs a nonzero baseline spread, so add a tiny ripple.
    let mut clean = ramp(0.5, 0.0, 0);
    for (i, f) in clean.force.iter_mut().enumerate() {
        *f += 1e-5 * ((i % 5) as f64 - 2.0);
    }
    let reference = detect_phases(&clean, DEFAULT_NOISE_WINDOW).unwrap();
    let filtered = detect_phases(&lowpass_filter(&ramp(0.5, 1e-3, 7), DEFAULT_CUTOFF).unwrap(), DEFAULT_NOISE_WINDOW).unwrap();
    assert!(within(filtered.t_contact, reference.t_contact, 2.0));
    assert!(within(filtered.t_puncture, reference.t_puncture, 2.0));
}

#[test]
fn second_smaller_peak_is_ignored() {
    let mut tr = ramp(0.5, 1e-3, 3);
    for (t, f) in tr.time.iter().zip(tr.force.iter_mut()) {
        if (1.6..=1.8).contains(t) {
            *f += 0.3 * (t - 1.6) / 0.2;
        }
    }
    let m = detect_phases(&tr, DEFAULT_NOISE_WINDOW).unwrap();
    assert!(within(m.t_puncture, 1.5, 2.0), "{m:?}");
}

#[test]
fn voltage_pipeline_and_feed() {
    let forces = ramp(0.5, 1e-3, 11);
    let volts: Vec<f64> = forces.force.iter().map(|f| f / PVDF_SENSITIVITY).collect();
    let raw = RawTrace::new(forces.time.clone(), volts).unwrap();
    let tr = lowpass_filter(&voltage_to_force(&raw, PVDF_SENSITIVITY).unwrap(), DEFAULT_CUTOFF).unwrap();
    let m = detect_phases(&tr, DEFAULT_NOISE_WINDOW).unwrap();
    assert!((m.peak_force - 0.5).abs() < 0.05);
    let (d, v) = deformation_from_feed(&m, &FeedProfile::Constant { v: 2.0 }).unwrap();
    assert!((d - 1.0e-3).abs() <= 0.01 * 1.0e-3, "d = {d}");
    assert_eq!(v, 2.0);
}

mod filter_props {
    use super::*;
    use proptest::prelude::*;

    fn trace(force: Vec<f64>) -> ForceTrace {
        let t = (0..force.len()).map(|i| i as f64 / FS).collect();
        ForceTrace::from_force(t, force).unwrap()
    }

    proptest! {
        #[test]
        fn constants_pass_unchanged(c in -10.0..10.0f64, n in 40usize..400, cutoff in 1.0..400.0f64, zero_phase in any::<bool>()) {
            let mode = if zero_phase { FilterMode::ZeroPhase } else { FilterMode::SinglePass };
            let out = lowpass_filter_with(&trace(vec![c; n]), cutoff, mode).unwrap();
            for f in out.force {
                prop_assert!((f - c).abs() <= 1e-9 * c.abs().max(1.0));
            }
        }

        #[test]
        fn filter_is_linear(xs in prop::collection::vec(-1.0..1.0f64, 40..200), ys_seed in 0u64..1000, k in -3.0..3.0f64) {
            let mut rng = StdRng::seed_from_u64(ys_seed);
            let ys: Vec<f64> = (0..xs.len()).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).collect();
            let combo: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| x + k * y).collect();
            let fx = lowpass_filter(&trace(xs), 50.0).unwrap().force;
            let fy = lowpass_filter(&trace(ys), 50.0).unwrap().force;
            let fc = lowpass_filter(&trace(combo), 50.0).unwrap().force;
            for i in 0..fc.len() {
                prop_assert!((fc[i] - (fx[i] + k * fy[i])).abs() < 1e-9);
            }
        }
    }
}
