//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use cellmech::equilibrium::{EquilibriumSolution, ProblemSetup};
use cellmech::geometry::{principal_curvatures, SegmentKind};
use cellmech::identify::MeasuredPoint;
use cellmech::material::{constitutive_eval, Stiffness};
use cellmech::response::force_deformation_curve;

/// Simulation-study setup with a speed-independent stiffness (Pa).
pub fn fixed(c1: f64) -> ProblemSetup {
    let mut s = ProblemSetup::sim_iv(1.0);
    s.material.stiffness = Stiffness::Fixed(c1);
    s
}

/// Measured points produced by direct solves on `grid`, independent of the inverse path.
pub fn synthetic_curve(setup: &ProblemSetup, grid: &[f64]) -> Vec<MeasuredPoint> {
    force_deformation_curve(grid, setup)
        .expect("synthetic sweep")
        .converged()
        .map(|r| MeasuredPoint { deformation: r.deformation, force: r.force })
        .collect()
}

/// Largest `|K_m T_m + K_c T_c - P| / P` over interior samples of the free bending segments.
pub fn laplace_residual(s: &EquilibriumSolution) -> f64 {
    let p = s.unknowns.p;
    let mut worst = 0.0_f64;
    for kind in [SegmentKind::BC, SegmentKind::CD, SegmentKind::DE] {
        let pts = &s.segment(kind).points;
        // Skip the ends, where one-sided differences and joint kinks live.
        for i in 2..pts.len().saturating_sub(2) {
            let (km, kc) = principal_curvatures(pts, i, s.r0).expect("curvature");
            let c = constitutive_eval(pts[i].lambda_m, pts[i].lambda_c, &s.material).expect("stretches");
            worst = worst.max((km * c.t_m + kc * c.t_c - p).abs() / p);
        }
    }
    worst
}
