//! Force-deformation sweeps, tension distributions and deformation inversion.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::equilibrium::{self, solve_equilibrium, EquilibriumSolution, ProblemSetup};
use crate::error::{Error, Result};
use crate::geometry::SegmentKind;
use crate::material::{constitutive_eval, SpeedState};

/// Sweeps start here: the band where the solver seeds itself without continuation.
const SWEEP_START: f64 = 0.45;

/// One grid point of a sweep. Failed points carry NaN values and the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub psi_b: f64,
    /// Injection force, N.
    pub force: f64,
    /// Cell deformation, m.
    pub deformation: f64,
    /// Internal pressure, Pa.
    pub pressure: f64,
    pub lambda_a: f64,
    pub lambda_f: f64,
    /// Radius of the flat contact on the plate, m.
    pub contact_radius: f64,
    pub converged: bool,
    pub note: Option<String>,
}

impl CurveRecord {
    fn solved(s: &EquilibriumSolution) -> Self {
        CurveRecord {
            psi_b: s.psi_b,
            force: s.force,
            deformation: s.deformation,
            pressure: s.unknowns.p,
            lambda_a: s.unknowns.lambda_a,
            lambda_f: s.unknowns.lambda_f,
            contact_radius: s.contact_radius(),
            converged: true,
            note: None,
        }
    }

    fn failed(psi_b: f64, note: String) -> Self {
        CurveRecord {
            psi_b,
            force: f64::NAN,
            deformation: f64::NAN,
            pressure: f64::NAN,
            lambda_a: f64::NAN,
            lambda_f: f64::NAN,
            contact_radius: f64::NAN,
            converged: false,
            note: Some(note),
        }
    }
}

/// Force-deformation curve at one speed, ordered by `psi_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseCurve {
    pub speed: SpeedState,
    pub records: Vec<CurveRecord>,
}

impl ResponseCurve {
    pub fn converged(&self) -> impl Iterator<Item = &CurveRecord> {
        self.records.iter().filter(|r| r.converged)
    }

    pub fn converged_count(&self) -> usize {
        self.converged().count()
    }

    /// Smallest and largest deformation among converged points.
    pub fn deformation_range(&self) -> Option<(f64, f64)> {
        let mut it = self.converged().map(|r| r.deformation);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), d| (lo.min(d), hi.max(d))))
    }

    /// Force at deformation `d` by linear interpolation between converged points.
    pub fn force_at(&self, d: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self.converged().map(|r| (r.deformation, r.force)).collect();
        pts.windows(2).find_map(|w| {
            let ((d0, f0), (d1, f1)) = (w[0], w[1]);
            (d >= d0.min(d1) && d <= d0.max(d1) && d1 != d0).then(|| f0 + (f1 - f0) * (d - d0) / (d1 - d0))
        })
    }

    /// Force and deformation strictly increase along the converged points.
    pub fn is_monotone(&self) -> bool {
        let pts: Vec<&CurveRecord> = self.converged().collect();
        pts.windows(2).all(|w| w[1].force > w[0].force && w[1].deformation > w[0].deformation)
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Argument("empty psi_b grid".into()));
    }
    if let Some(bad) = grid.iter().find(|&&p| !(p > 0.0 && p < FRAC_PI_2)) {
        return Err(Error::Domain(format!("grid value {bad} outside (0, pi/2)")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("psi_b grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Continues from `start` through `targets` in order, recording each point.
///
/// Once the branch is diagnosed as ending (or two points in a row fail) the
/// remaining targets are recorded as not attempted.
fn walk(setup: &ProblemSetup, start: &EquilibriumSolution, targets: &[f64], out: &mut Vec<CurveRecord>) {
    let mut cur = start.clone();
    let mut misses = 0;
    for (i, &t) in targets.iter().enumerate() {
        match equilibrium::continue_to(setup, &cur, t) {
            Ok(s) => {
                out.push(CurveRecord::solved(&s));
                cur = s;
                misses = 0;
            }
            Err((e, last)) => {
                let ended = matches!(e, Error::Infeasible(_));
                out.push(CurveRecord::failed(t, e.to_string()));
                cur = last;
                misses += 1;
                if ended || misses >= 2 {
                    let why = format!("not attempted: continuation stopped at psi_b = {t} ({e})");
                    out.extend(targets[i + 1..].iter().map(|&p| CurveRecord::failed(p, why.clone())));
                    return;
                }
            }
        }
    }
}

/// Solves every grid point by continuation and assembles the curve.
///
/// The sweep starts at the grid point nearest a well-conditioned indentation and
/// walks outward in both directions. Infeasible or unconverged points are kept
/// as flagged records; the call fails only if no point converges.
pub fn force_deformation_curve(grid: &[f64], setup: &ProblemSetup) -> Result<ResponseCurve> {
    validate_grid(grid)?;
    setup.validate()?;
    let i0 = (0..grid.len())
        .min_by(|&a, &b| (grid[a] - SWEEP_START).abs().total_cmp(&(grid[b] - SWEEP_START).abs()))
        .expect("grid is not empty");

    let mut records = Vec::with_capacity(grid.len());
    let seed = equilibrium::seed(setup).map_err(|e| Error::Sweep(format!("no starting solution: {e}")))?;
    let start = match equilibrium::continue_to(setup, &seed, grid[i0]) {
        Ok(s) => {
            records.push(CurveRecord::solved(&s));
            s
        }
        Err((e, last)) => {
            records.push(CurveRecord::failed(grid[i0], e.to_string()));
            last
        }
    };
    let up: Vec<f64> = grid[i0 + 1..].to_vec();
    let down: Vec<f64> = grid[..i0].iter().rev().copied().collect();
    walk(setup, &start, &up, &mut records);
    walk(setup, &start, &down, &mut records);
    records.sort_by(|a, b| a.psi_b.total_cmp(&b.psi_b));

    let curve = ResponseCurve { speed: setup.speed, records };
    if curve.converged_count() == 0 {
        let why = curve.records.iter().find_map(|r| r.note.clone()).unwrap_or_default();
        return Err(Error::Sweep(format!("no grid point converged; first failure: {why}")));
    }
    Ok(curve)
}

/// Runs one sweep per speed on separate threads.
pub fn force_deformation_curves(grid: &[f64], setup: &ProblemSetup, speeds: &[SpeedState]) -> Result<Vec<ResponseCurve>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = speeds
            .iter()
            .map(|&speed| {
                let s = ProblemSetup { speed, ..*setup };
                scope.spawn(move || force_deformation_curve(grid, &s))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Sweep("sweep thread panicked".into()))))
            .collect()
    })
}

/// Constitutive quantities at one membrane sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub psi: f64,
    pub segment: SegmentKind,
    pub lambda_m: f64,
    pub lambda_c: f64,
    /// Tensions, N/m.
    pub t_m: f64,
    pub t_c: f64,
    /// Cauchy stresses, Pa.
    pub sigma_m: f64,
    pub sigma_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionProfile {
    pub samples: Vec<ProfileSample>,
}

impl DistributionProfile {
    /// Sample of largest meridian tension.
    pub fn max_t_m(&self) -> Option<&ProfileSample> {
        self.samples.iter().max_by(|a, b| a.t_m.total_cmp(&b.t_m))
    }
}

/// Tensions and stresses along the whole meridian, pole A to pole F.
pub fn distribution_profile(solution: &EquilibriumSolution) -> Result<DistributionProfile> {
    let samples = solution
        .points()
        .map(|q| {
            let c = constitutive_eval(q.lambda_m, q.lambda_c, &solution.material)?;
            Ok(ProfileSample {
                psi: q.psi,
                segment: q.segment,
                lambda_m: q.lambda_m,
                lambda_c: q.lambda_c,
                t_m: c.t_m,
                t_c: c.t_c,
                sigma_m: c.sigma_m,
                sigma_c: c.sigma_c,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DistributionProfile { samples })
}

/// Relative tolerance on the matched deformation.
const D_TOL: f64 = 1e-6;
/// Stride used to extend the solved range while bracketing a target.
const BRACKET_STEP: f64 = 0.05;

/// Inverts `psi_b -> d` for one setup, caching solutions between queries.
///
/// Useful when many deformations are matched against the same model, as in
/// calibration: every new query starts from the nearest cached solution.
#[derive(Debug, Clone)]
pub struct DeformationInverse {
    setup: ProblemSetup,
    /// Converged solutions sorted by `psi_b` (and hence by deformation).
    cache: Vec<EquilibriumSolution>,
    /// Branch ends discovered so far: no solution below/above these angles.
    floor: Option<(f64, String)>,
    ceiling: Option<(f64, String)>,
}

impl DeformationInverse {
    pub fn new(setup: &ProblemSetup) -> Result<Self> {
        setup.validate()?;
        let first = solve_equilibrium(SWEEP_START, setup, None)?;
        Ok(DeformationInverse { setup: *setup, cache: vec![first], floor: None, ceiling: None })
    }

    pub fn setup(&self) -> &ProblemSetup {
        &self.setup
    }

    fn insert(&mut self, s: EquilibriumSolution) {
        let i = self.cache.partition_point(|c| c.psi_b < s.psi_b);
        if self.cache.get(i).is_some_and(|c| c.psi_b == s.psi_b) {
            return;
        }
        self.cache.insert(i, s);
    }

    fn range_error(&self, d: f64) -> Error {
        let lo = self.cache.first().map_or(f64::NAN, |s| s.deformation);
        let hi = self.cache.last().map_or(f64::NAN, |s| s.deformation);
        let why = [&self.floor, &self.ceiling]
            .iter()
            .filter_map(|b| b.as_ref().map(|(_, m)| m.clone()))
            .collect::<Vec<_>>()
            .join("; ");
        Error::Range(format!(
            "deformation {:.2} um outside the solvable range [{:.2}, {:.2}] um ({why})",
            d * 1e6,
            lo * 1e6,
            hi * 1e6
        ))
    }

    /// Extends the cache downward or upward by one stride; false once the branch ends.
    fn extend(&mut self, upward: bool) -> bool {
        let (edge, bound) = if upward {
            (self.cache.last().expect("non-empty").clone(), &self.ceiling)
        } else {
            (self.cache.first().expect("non-empty").clone(), &self.floor)
        };
        let step = if upward { BRACKET_STEP } else { -BRACKET_STEP };
        let mut target = edge.psi_b + step;
        if let Some((b, _)) = bound {
            if (upward && target >= *b) || (!upward && target <= *b) {
                target = 0.5 * (edge.psi_b + b);
                if (target - edge.psi_b).abs() < 1e-3 {
                    return false;
                }
            }
        }
        if !(target > 0.0 && target < FRAC_PI_2) {
            return false;
        }
        match equilibrium::continue_to(&self.setup, &edge, target) {
            Ok(s) => {
                self.insert(s);
                true
            }
            Err((e, last)) => {
                let msg = e.to_string();
                if upward {
                    self.ceiling = Some((target, msg));
                } else {
                    self.floor = Some((target, msg));
                }
                // Keep whatever progress the walk made.
                if last.psi_b != edge.psi_b {
                    if let Ok(s) = solve_equilibrium(last.psi_b, &self.setup, Some(&last)) {
                        self.insert(s);
                        return true;
                    }
                }
                false
            }
        }
    }

    /// Solution whose deformation matches `d` within a relative 1e-6.
    pub fn solve(&mut self, d: f64) -> Result<EquilibriumSolution> {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::Range(format!("target deformation must be positive, got {d}")));
        }
        // Bracket the target inside the cached range.
        loop {
            let lo = self.cache.first().expect("non-empty").deformation;
            let hi = self.cache.last().expect("non-empty").deformation;
            if d >= lo && d <= hi {
                break;
            }
            if !self.extend(d > hi) {
                return Err(self.range_error(d));
            }
        }
        let i = self.cache.partition_point(|c| c.deformation < d);
        let exact = |s: &EquilibriumSolution| ((s.deformation - d) / d).abs() <= D_TOL;
        if let Some(s) = self.cache.get(i).filter(|s| exact(s)) {
            return Ok(s.clone());
        }
        if i > 0 && exact(&self.cache[i - 1]) {
            return Ok(self.cache[i - 1].clone());
        }
        let (mut a, mut b) = (self.cache[i - 1].clone(), self.cache[i].clone());
        let (mut fa, mut fb) = (a.deformation - d, b.deformation - d);
        // Illinois-modified regula falsi on psi_b.
        let mut side = 0i8;
        for _ in 0..60 {
            let psi = (a.psi_b * fb - b.psi_b * fa) / (fb - fa);
            let psi = if psi > a.psi_b && psi < b.psi_b { psi } else { 0.5 * (a.psi_b + b.psi_b) };
            let warm = if (psi - a.psi_b).abs() < (b.psi_b - psi).abs() { &a } else { &b };
            let s = solve_equilibrium(psi, &self.setup, Some(warm))?;
            let fs = s.deformation - d;
            self.insert(s.clone());
            if exact(&s) {
                return Ok(s);
            }
            if fs < 0.0 {
                a = s;
                fa = fs;
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            } else {
                b = s;
                fb = fs;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            }
            if b.psi_b - a.psi_b < 1e-13 {
                break;
            }
        }
        Err(Error::Convergence { iterations: 60, residual: fa.abs().min(fb.abs()) / d })
    }
}

/// Force and contact angle at which the cell deformation equals `d_target` (m).
pub fn force_at_deformation(d_target: f64, setup: &ProblemSetup) -> Result<(f64, f64)> {
    let mut inv = DeformationInverse::new(setup)?;
    let s = inv.solve(d_target)?;
    Ok((s.force, s.psi_b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(validate_grid(&[]).is_err());
        assert!(validate_grid(&[0.3, 0.2]).is_err());
        assert!(validate_grid(&[0.3, 0.3]).is_err());
        assert!(validate_grid(&[0.0, 0.3]).is_err());
        assert!(validate_grid(&[0.3, 1.6]).is_err());
        assert!(validate_grid(&[0.3, 0.4]).is_ok());
    }

    fn rec(psi: f64, d: f64, f: f64) -> CurveRecord {
        CurveRecord {
            deformation: d,
            force: f,
            ..CurveRecord::solved_stub(psi)
        }
    }

    impl CurveRecord {
        fn solved_stub(psi: f64) -> Self {
            CurveRecord {
                psi_b: psi,
                force: 0.0,
                deformation: 0.0,
                pressure: 0.0,
                lambda_a: 1.0,
                lambda_f: 1.0,
                contact_radius: 0.0,
                converged: true,
                note: None,
            }
        }
    }

    #[test]
    fn interpolation_and_monotonicity() {
        let mut c = ResponseCurve {
            speed: SpeedState { v: 1.0, a: 0.0 },
            records: vec![rec(0.4, 1.0, 10.0), CurveRecord::failed(0.45, "x".into()), rec(0.5, 3.0, 30.0)],
        };
        assert_eq!(c.converged_count(), 2);
        assert_eq!(c.deformation_range(), Some((1.0, 3.0)));
        assert!((c.force_at(2.0).unwrap() - 20.0).abs() < 1e-12);
        assert!(c.force_at(3.5).is_none());
        assert!(c.is_monotone());
        c.records.push(rec(0.6, 2.5, 40.0));
        assert!(!c.is_monotone());
    }

    #[test]
    fn failed_records_are_nan() {
        let r = CurveRecord::failed(0.1, "why".into());
        assert!(!r.converged && r.force.is_nan() && r.note.as_deref() == Some("why"));
    }

    #[test]
    fn nonpositive_target_is_a_range_error() {
        let inv_setup = ProblemSetup::sim_iv(1.0);
        let mut inv = DeformationInverse { setup: inv_setup, cache: Vec::new(), floor: None, ceiling: None };
        assert!(matches!(inv.solve(0.0), Err(Error::Range(_))));
        assert!(matches!(inv.solve(-1e-6), Err(Error::Range(_))));
    }
}
