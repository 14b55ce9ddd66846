//! Identification of the rate law from injection experiments.
//!
//! Step one calibrates `C1` per experiment by fitting the forward model to the
//! measured force-deformation points. Step two fits the velocity polynomial to
//! constant-velocity calibrations and the reciprocal reduction law to the ratio
//! of accelerated to constant-velocity stiffness.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::equilibrium::ProblemSetup;
use crate::error::{Error, Result};
use crate::material::{RateCoefficients, SpeedState, Stiffness};
use crate::response::DeformationInverse;

const MPA: f64 = 1.0e6;

/// Default calibration bracket for `C1`, Pa.
pub const DEFAULT_BRACKET: (f64, f64) = (0.01 * MPA, 2.0 * MPA);

/// Reference stiffness for the cached unit model, Pa.
const C_REF: f64 = 0.1 * MPA;

/// `C1` calibrated under constant velocity. `v` in mm/s, `c1` in MPa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocitySample {
    pub v: f64,
    pub c1: f64,
}

/// Reduction coefficient at acceleration `a` (mm/s^2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelerationSample {
    pub a: f64,
    pub epsilon: f64,
}

/// One measured point: deformation in m, force in N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredPoint {
    pub deformation: f64,
    pub force: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Elastic coefficient, Pa.
    pub c1: f64,
    /// Root-mean-square force misfit, N.
    pub residual: f64,
    pub iterations: usize,
}

/// Velocity polynomial coefficients in MPa, MPa s/mm and MPa s^2/mm^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityFit {
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
}

impl VelocityFit {
    /// Constant-velocity `C1` in MPa.
    pub fn eval(&self, v: f64) -> f64 {
        (self.k2 * v + self.k1) * v + self.k0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelerationFit {
    pub g0: f64,
    pub g1: f64,
    pub g2: f64,
}

impl AccelerationFit {
    /// The identity reduction used when no accelerated data is available.
    pub const IDENTITY: AccelerationFit = AccelerationFit { g0: 0.0, g1: 1.0, g2: 0.0 };

    pub fn eval(&self, a: f64) -> f64 {
        self.g0 + 1.0 / (self.g1 + self.g2 * a)
    }
}

/// Forward model `d -> F` for one cell geometry.
///
/// Without surface traction the equations are homogeneous in `C1`: shapes do not
/// depend on it and forces scale linearly. The model is then solved once at a
/// reference stiffness and rescaled, which makes calibration nearly free after the
/// first evaluation. With traction every trial `C1` is solved afresh.
pub struct ForwardModel {
    template: ProblemSetup,
    reference: Option<DeformationInverse>,
}

impl ForwardModel {
    /// `template` supplies geometry, `alpha`, `h`, traction and numerics; its stiffness is ignored.
    pub fn new(template: &ProblemSetup) -> Self {
        ForwardModel { template: *template, reference: None }
    }

    pub fn scales_linearly(&self) -> bool {
        self.template.material.surface_traction_m == 0.0
    }

    fn setup_at(&self, c1: f64) -> ProblemSetup {
        let mut s = self.template;
        s.material.stiffness = Stiffness::Fixed(c1);
        s.speed = SpeedState::default();
        s
    }

    /// Forces (N) at the given deformations for stiffness `c1` (Pa).
    pub fn forces(&mut self, c1: f64, deformations: &[f64]) -> Result<Vec<f64>> {
        if self.scales_linearly() {
            if self.reference.is_none() {
                self.reference = Some(DeformationInverse::new(&self.setup_at(C_REF))?);
            }
            let inv = self.reference.as_mut().expect("just built");
            deformations.iter().map(|&d| Ok(inv.solve(d)?.force * (c1 / C_REF))).collect()
        } else {
            let mut inv = DeformationInverse::new(&self.setup_at(c1))?;
            deformations.iter().map(|&d| Ok(inv.solve(d)?.force)).collect()
        }
    }
}

fn check_curve(curve: &[MeasuredPoint]) -> Result<()> {
    if curve.len() < 3 {
        return Err(Error::Argument(format!("calibration needs at least 3 measured points, got {}", curve.len())));
    }
    if curve.iter().any(|p| !(p.deformation > 0.0 && p.force.is_finite() && p.deformation.is_finite())) {
        return Err(Error::Argument("measured points need positive deformation and finite force".into()));
    }
    Ok(())
}

/// Golden-section minimization of `f` on `[lo, hi]` to relative width `rtol`.
fn golden<F>(mut f: F, lo: f64, hi: f64, rtol: f64) -> Result<(f64, f64, usize)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    let mut it = 0;
    while (b - a) > rtol * 0.5 * (a + b).abs() && it < 200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
        it += 1;
    }
    let x = 0.5 * (a + b);
    Ok((x, f(x)?, it))
}

/// Calibrates `C1` against one measured curve using a shared forward model.
pub fn calibrate_with(model: &mut ForwardModel, curve: &[MeasuredPoint], bracket: (f64, f64)) -> Result<CalibrationResult> {
    check_curve(curve)?;
    let (lo, hi) = bracket;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::Argument(format!("invalid C1 bracket ({lo}, {hi})")));
    }
    let ds: Vec<f64> = curve.iter().map(|p| p.deformation).collect();
    let n = curve.len() as f64;
    let misfit = |model: &mut ForwardModel, c1: f64| -> Result<f64> {
        let f = model.forces(c1, &ds)?;
        Ok(f.iter().zip(curve).map(|(m, p)| (m - p.force).powi(2)).sum::<f64>() / n)
    };
    // With linear scaling the search costs nothing, so it is run far past the
    // required 1e-3; the nonlinear path stops at that tolerance.
    let rtol = if model.scales_linearly() { 1e-10 } else { 1e-3 };
    let (c1, mse, iterations) = golden(|c| misfit(model, c), lo, hi, rtol)?;
    let edge = 1e-6 * (hi - lo).max(rtol * c1);
    if c1 - lo <= edge.max(2.0 * rtol * c1) || hi - c1 <= edge.max(2.0 * rtol * c1) {
        return Err(Error::Calibration(format!(
            "misfit minimum lies on the bracket edge ({:.4} MPa in [{:.4}, {:.4}] MPa)",
            c1 / MPA,
            lo / MPA,
            hi / MPA
        )));
    }
    Ok(CalibrationResult { c1, residual: mse.sqrt(), iterations })
}

/// Finds the `C1` (Pa) whose forward model best reproduces the measured points.
///
/// `template` supplies the cell geometry, `alpha`, `h` and numerics.
pub fn calibrate_c1(curve: &[MeasuredPoint], template: &ProblemSetup, bracket: (f64, f64)) -> Result<CalibrationResult> {
    calibrate_with(&mut ForwardModel::new(template), curve, bracket)
}

/// Least-squares quadratic `c1(v)`; exact interpolation for three distinct velocities.
pub fn fit_velocity_coeffs(samples: &[VelocitySample]) -> Result<VelocityFit> {
    if samples.iter().any(|s| !(s.v >= 0.0 && s.c1 > 0.0 && s.v.is_finite() && s.c1.is_finite())) {
        return Err(Error::Argument("velocity samples need v >= 0 and c1 > 0".into()));
    }
    let mut vs: Vec<f64> = samples.iter().map(|s| s.v).collect();
    vs.sort_by(f64::total_cmp);
    vs.dedup();
    if vs.len() < 3 {
        return Err(Error::Fit(format!(
            "quadratic fit needs at least 3 distinct velocities, got {}",
            vs.len()
        )));
    }
    // Sorting first makes the result independent of the input order.
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.v.total_cmp(&b.v).then(a.c1.total_cmp(&b.c1)));
    let a = DMatrix::from_fn(s.len(), 3, |i, j| s[i].v.powi(j as i32));
    let b = DVector::from_iterator(s.len(), s.iter().map(|x| x.c1));
    let k = a
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::Fit(format!("least-squares solve failed: {e}")))?;
    Ok(VelocityFit { k0: k[0], k1: k[1], k2: k[2] })
}

fn reduction_sse(s: &[AccelerationSample], g: &AccelerationFit) -> f64 {
    s.iter().map(|x| (x.epsilon - g.eval(x.a)).powi(2)).sum()
}

/// Weighted linear fit of `1/(eps - g0) = g1 + g2 a` for fixed `g0`.
fn reciprocal_fit(s: &[AccelerationSample], g0: f64) -> Option<AccelerationFit> {
    let (mut sw, mut swa, mut swaa, mut swy, mut sway) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for x in s {
        let e = x.epsilon - g0;
        if e <= 0.0 {
            return None;
        }
        // Weights make the linearized residual approximate the residual in eps.
        let (y, w) = (1.0 / e, e * e);
        sw += w;
        swa += w * x.a;
        swaa += w * x.a * x.a;
        swy += w * y;
        sway += w * x.a * y;
    }
    let det = sw * swaa - swa * swa;
    if det.abs() < 1e-300 {
        return None;
    }
    let g2 = (sw * sway - swa * swy) / det;
    let g1 = (swy - g2 * swa) / sw;
    Some(AccelerationFit { g0, g1, g2 })
}

/// Levenberg-Marquardt polish of all three parameters on the residual in eps.
fn polish(s: &[AccelerationSample], mut g: AccelerationFit) -> AccelerationFit {
    let mut sse = reduction_sse(s, &g);
    let mut mu = 1e-8;
    for _ in 0..200 {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for x in s {
            let q = g.g1 + g.g2 * x.a;
            let r = x.epsilon - g.eval(x.a);
            let j = Vector3::new(1.0, -1.0 / (q * q), -x.a / (q * q));
            jtj += j * j.transpose();
            jtr += j * r;
        }
        let mut improved = false;
        while mu < 1e12 {
            let mut m = jtj;
            for i in 0..3 {
                m[(i, i)] += mu * jtj[(i, i)].max(1e-30);
            }
            let Some(step) = m.lu().solve(&jtr) else {
                mu *= 10.0;
                continue;
            };
            let trial = AccelerationFit { g0: g.g0 + step[0], g1: g.g1 + step[1], g2: g.g2 + step[2] };
            let t = reduction_sse(s, &trial);
            if t.is_finite() && t <= sse && trial.g1 + trial.g2 * s.iter().map(|x| x.a).fold(0.0, f64::max) > 0.0 {
                let small = step.norm() <= 1e-15 * (1.0 + g.g0.abs() + g.g1.abs() + g.g2.abs());
                g = trial;
                improved = t < sse;
                sse = t;
                mu = (mu * 0.1).max(1e-15);
                if small {
                    return g;
                }
                break;
            }
            mu *= 10.0;
        }
        if !improved || sse == 0.0 {
            break;
        }
    }
    g
}

/// Fits `eps(a) = g0 + 1/(g1 + g2 a)` by variable projection over `g0` then
/// Levenberg-Marquardt on all three parameters.
pub fn fit_acceleration_coeffs(samples: &[AccelerationSample]) -> Result<AccelerationFit> {
    if samples.iter().any(|s| !(s.a >= 0.0 && s.epsilon > 0.0 && s.a.is_finite() && s.epsilon.is_finite())) {
        return Err(Error::Argument("acceleration samples need a >= 0 and epsilon > 0".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(|x, y| x.a.total_cmp(&y.a).then(y.epsilon.total_cmp(&x.epsilon)));
    let mut distinct: Vec<f64> = s.iter().map(|x| x.a).collect();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Fit(format!(
            "reciprocal fit needs at least 3 distinct accelerations, got {}",
            distinct.len()
        )));
    }
    let (emin, emax) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
        (lo.min(x.epsilon), hi.max(x.epsilon))
    });
    if emax - emin <= 1e-12 * emax {
        return Err(Error::Fit("constant reduction data: the reciprocal term is undetermined".into()));
    }
    if s.windows(2).any(|w| w[1].a > w[0].a && w[1].epsilon > w[0].epsilon) {
        return Err(Error::Fit("reduction data must not increase with acceleration".into()));
    }
    // Multistart over g0 in [0, min eps): each start is a weighted linear problem.
    let starts = 64;
    let mut best: Option<(f64, AccelerationFit)> = None;
    for k in 0..starts {
        let g0 = emin * k as f64 / starts as f64;
        if let Some(g) = reciprocal_fit(&s, g0) {
            let e = reduction_sse(&s, &g);
            if e.is_finite() && best.as_ref().is_none_or(|(b, _)| e < *b) {
                best = Some((e, g));
            }
        }
    }
    let (_, g) = best.ok_or_else(|| Error::Fit("no admissible starting point".into()))?;
    let g = polish(&s, g);
    if !(g.g1 > 0.0 && g.g2 >= 0.0 && g.g0.is_finite()) {
        return Err(Error::Fit(format!(
            "fit left the admissible region: g0 = {}, g1 = {}, g2 = {}",
            g.g0, g.g1, g.g2
        )));
    }
    Ok(g)
}

/// Constant-velocity injection: velocity (mm/s) and measured curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantVelocityExperiment {
    pub v: f64,
    pub curve: Vec<MeasuredPoint>,
}

/// Accelerated injection: acceleration (mm/s^2), velocity at puncture (mm/s) and curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceleratedExperiment {
    pub a: f64,
    pub v_at_puncture: f64,
    pub curve: Vec<MeasuredPoint>,
}

/// Everything produced by the two-step identification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateModelFit {
    pub coefficients: RateCoefficients,
    pub velocity: VelocityFit,
    pub acceleration: AccelerationFit,
    pub velocity_samples: Vec<VelocitySample>,
    pub acceleration_samples: Vec<AccelerationSample>,
    pub calibrations: Vec<CalibrationResult>,
}

/// Runs the full identification and returns the assembled rate law.
///
/// Without accelerated experiments the reduction factor is left at the identity.
pub fn build_rate_model(
    constant_v: &[ConstantVelocityExperiment],
    accelerated: &[AcceleratedExperiment],
    template: &ProblemSetup,
    bracket: (f64, f64),
) -> Result<RateModelFit> {
    if constant_v.len() < 3 {
        return Err(Error::Argument(format!(
            "need at least 3 constant-velocity experiments, got {}",
            constant_v.len()
        )));
    }
    if !accelerated.is_empty() && accelerated.len() < 3 {
        return Err(Error::Argument(format!(
            "need at least 3 accelerated experiments (or none), got {}",
            accelerated.len()
        )));
    }
    // All experiments share the cell geometry, so one forward model serves them all.
    let mut model = ForwardModel::new(template);
    let mut calibrations = Vec::new();
    let mut velocity_samples = Vec::new();
    for e in constant_v {
        let c = calibrate_with(&mut model, &e.curve, bracket)?;
        velocity_samples.push(VelocitySample { v: e.v, c1: c.c1 / MPA });
        calibrations.push(c);
    }
    let velocity = fit_velocity_coeffs(&velocity_samples)?;

    let mut acceleration_samples = Vec::new();
    for e in accelerated {
        let c = calibrate_with(&mut model, &e.curve, bracket)?;
        let base = velocity.eval(e.v_at_puncture);
        if !(base > 0.0) {
            return Err(Error::Fit(format!("fitted constant-velocity C1 at v = {} is not positive", e.v_at_puncture)));
        }
        acceleration_samples.push(AccelerationSample { a: e.a, epsilon: c.c1 / MPA / base });
        calibrations.push(c);
    }
    let acceleration = if accelerated.is_empty() {
        AccelerationFit::IDENTITY
    } else {
        fit_acceleration_coeffs(&acceleration_samples)?
    };
    let coefficients = RateCoefficients::from_mpa(
        velocity.k0,
        velocity.k1,
        velocity.k2,
        acceleration.g0,
        acceleration.g1,
        acceleration.g2,
    );
    coefficients.validate().map_err(|e| Error::Fit(format!("identified coefficients are not admissible: {e}")))?;
    Ok(RateModelFit { coefficients, velocity, acceleration, velocity_samples, acceleration_samples, calibrations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn vs(v: f64, c1: f64) -> VelocitySample {
        VelocitySample { v, c1 }
    }

    #[test]
    fn velocity_fit_interpolates_three_points() {
        let k = fit_velocity_coeffs(&[vs(0.0, 0.0624), vs(1.0, 0.19), vs(2.0, 0.501)]).unwrap();
        assert!((k.k0 - 0.0624).abs() < 1e-12);
        assert!((k.k1 - 0.0359).abs() < 1e-12);
        assert!((k.k2 - 0.0917).abs() < 1e-12);
    }

    #[test]
    fn velocity_fit_constant_data() {
        let k = fit_velocity_coeffs(&[vs(0.5, 0.3), vs(1.0, 0.3), vs(1.5, 0.3), vs(3.0, 0.3)]).unwrap();
        assert!((k.k0 - 0.3).abs() < 1e-12 && k.k1.abs() < 1e-12 && k.k2.abs() < 1e-12);
    }

    #[test]
    fn velocity_fit_rejects_duplicates() {
        let r = fit_velocity_coeffs(&[vs(1.0, 0.2), vs(1.0, 0.21), vs(2.0, 0.5)]);
        assert!(matches!(r, Err(Error::Fit(_))));
    }

    #[test]
    fn velocity_fit_overdetermined_exact() {
        let (k0, k1, k2) = (0.057, 0.0495, 0.0875);
        let s: Vec<_> = (0..20).map(|i| i as f64 * 0.15).map(|v| vs(v, k0 + k1 * v + k2 * v * v)).collect();
        let k = fit_velocity_coeffs(&s).unwrap();
        assert!((k.k0 - k0).abs() < 1e-10 && (k.k1 - k1).abs() < 1e-10 && (k.k2 - k2).abs() < 1e-10);
    }

    fn eps(g: &AccelerationFit, a: f64) -> AccelerationSample {
        AccelerationSample { a, epsilon: g.eval(a) }
    }

    const PAPER: AccelerationFit = AccelerationFit { g0: 0.6068, g1: 2.5358, g2: 3.3214 };

    #[test]
    fn acceleration_fit_three_points_exact() {
        let s = [eps(&PAPER, 0.0), eps(&PAPER, 1.0), eps(&PAPER, 2.0)];
        let g = fit_acceleration_coeffs(&s).unwrap();
        assert!((g.g0 - PAPER.g0).abs() < 1e-8, "{g:?}");
        assert!((g.g1 - PAPER.g1).abs() < 1e-8, "{g:?}");
        assert!((g.g2 - PAPER.g2).abs() < 1e-8, "{g:?}");
    }

    #[test]
    fn acceleration_fit_rounded_printed_values() {
        let s = [
            AccelerationSample { a: 0.0, epsilon: 1.001153 },
            AccelerationSample { a: 1.0, epsilon: 0.777530 },
            AccelerationSample { a: 2.0, epsilon: 0.715749 },
        ];
        let g = fit_acceleration_coeffs(&s).unwrap();
        assert_relative_eq!(g.g0, 0.6068, max_relative = 2e-3);
        assert_relative_eq!(g.g1, 2.5358, max_relative = 2e-3);
        assert_relative_eq!(g.g2, 3.3214, max_relative = 2e-3);
    }

    #[test]
    fn acceleration_fit_overdetermined() {
        let truth = AccelerationFit { g0: 0.6066, g1: 2.5333, g2: 3.3922 };
        let s: Vec<_> = (0..15).map(|i| eps(&truth, 0.4 * i as f64)).collect();
        let g = fit_acceleration_coeffs(&s).unwrap();
        assert!((g.g0 - truth.g0).abs() < 1e-8 && (g.g1 - truth.g1).abs() < 1e-8 && (g.g2 - truth.g2).abs() < 1e-8);
    }

    #[test]
    fn acceleration_fit_rejects_degenerate_data() {
        let flat: Vec<_> = (0..4).map(|i| AccelerationSample { a: i as f64, epsilon: 0.8 }).collect();
        assert!(matches!(fit_acceleration_coeffs(&flat), Err(Error::Fit(_))));
        let rising: Vec<_> = (0..4).map(|i| AccelerationSample { a: i as f64, epsilon: 0.8 + 0.01 * i as f64 }).collect();
        assert!(matches!(fit_acceleration_coeffs(&rising), Err(Error::Fit(_))));
        let two = [eps(&PAPER, 0.0), eps(&PAPER, 1.0), eps(&PAPER, 1.0)];
        assert!(matches!(fit_acceleration_coeffs(&two), Err(Error::Fit(_))));
    }

    #[test]
    fn acceleration_fit_order_invariant() {
        let s = [eps(&PAPER, 0.0), eps(&PAPER, 0.7), eps(&PAPER, 2.0), eps(&PAPER, 5.0)];
        let mut r = s;
        r.reverse();
        assert_eq!(fit_acceleration_coeffs(&s).unwrap(), fit_acceleration_coeffs(&r).unwrap());
    }

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, fx, _) = golden(|x| Ok((x - 0.3).powi(2)), 0.0, 1.0, 1e-10).unwrap();
        assert!((x - 0.3).abs() < 1e-8 && fx < 1e-15);
    }

    #[test]
    fn calibration_rejects_short_curves() {
        let p = MeasuredPoint { deformation: 2e-4, force: 3e-5 };
        let r = calibrate_c1(&[p, p], &ProblemSetup::sim_iv(1.0), DEFAULT_BRACKET);
        assert!(matches!(r, Err(Error::Argument(_))));
    }
}
