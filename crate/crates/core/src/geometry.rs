//! Geometry of the deformed meridian: angles, curvatures, shape, height and volume.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Relative slack allowed when checking `lambda_m >= |omega|`.
const OMEGA_SLACK: f64 = 1e-9;

/// Meridian regions from the free pole A to the needle pole F.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentKind {
    /// Flat contact with the supporting plate.
    AB,
    /// Bending region up to the equator.
    BC,
    /// Bending region from the equator to the crater rim.
    CD,
    /// Bending region inside the crater, ending at the needle edge.
    DE,
    /// Flat contact with the needle face.
    EF,
}

impl SegmentKind {
    pub const ALL: [SegmentKind; 5] =
        [SegmentKind::AB, SegmentKind::BC, SegmentKind::CD, SegmentKind::DE, SegmentKind::EF];

    /// `+1` for AB, BC and CD; `-1` for DE and EF.
    pub fn sign(self) -> f64 {
        match self {
            SegmentKind::AB | SegmentKind::BC | SegmentKind::CD => 1.0,
            SegmentKind::DE | SegmentKind::EF => -1.0,
        }
    }

    pub fn is_flat(self) -> bool {
        matches!(self, SegmentKind::AB | SegmentKind::EF)
    }

    pub fn label(self) -> &'static str {
        match self {
            SegmentKind::AB => "AB",
            SegmentKind::BC => "BC",
            SegmentKind::CD => "CD",
            SegmentKind::DE => "DE",
            SegmentKind::EF => "EF",
        }
    }
}

/// One sample of the membrane state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MembranePoint {
    pub psi: f64,
    pub lambda_m: f64,
    pub lambda_c: f64,
    /// `lambda_c * sin(psi)`, the deformed radius over `r0`.
    pub delta: f64,
    /// Derivative of `delta` with respect to `psi`.
    pub omega: f64,
    pub segment: SegmentKind,
}

impl MembranePoint {
    /// Sample of a flat segment, where `omega = +-lambda_m`.
    pub fn flat(psi: f64, lambda_m: f64, lambda_c: f64, segment: SegmentKind) -> Self {
        MembranePoint {
            psi,
            lambda_m,
            lambda_c,
            delta: lambda_c * psi.sin(),
            omega: segment.sign() * lambda_m,
            segment,
        }
    }

    /// Sample of a bending segment given `(lambda_m, delta, omega)`.
    pub fn bending(psi: f64, lambda_m: f64, delta: f64, omega: f64, segment: SegmentKind) -> Self {
        let lambda_c = delta / psi.sin();
        MembranePoint { psi, lambda_m, lambda_c, delta: lambda_c * psi.sin(), omega, segment }
    }

    /// `sqrt(lambda_m^2 - omega^2)`, the axial rate `|eta'| / r0`.
    pub fn axial_rate(&self) -> Result<f64> {
        let s = self.lambda_m * self.lambda_m - self.omega * self.omega;
        if s < -OMEGA_SLACK * self.lambda_m * self.lambda_m {
            return Err(Error::State(format!(
                "|omega| = {} exceeds lambda_m = {} at psi = {}",
                self.omega.abs(),
                self.lambda_m,
                self.psi
            )));
        }
        Ok(s.max(0.0).sqrt())
    }
}

/// One vertex of the deformed half meridian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapePoint {
    pub rho: f64,
    pub eta: f64,
    pub psi: f64,
    pub segment: SegmentKind,
}

/// Samples of one meridian region in increasing `psi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTrajectory {
    pub kind: SegmentKind,
    pub points: Vec<MembranePoint>,
}

/// Inclination of the meridian tangent, continued past `pi/2` through the crater.
///
/// Inside the crater (DE) the tangent turns beyond horizontal, so the angle there
/// exceeds `pi`; the flat needle face (EF) reports `pi`.
pub fn surface_angle(p: &MembranePoint) -> Result<f64> {
    p.axial_rate()?;
    let c = (p.omega / p.lambda_m).clamp(-1.0, 1.0);
    Ok(match p.segment {
        SegmentKind::AB => 0.0,
        SegmentKind::EF => PI,
        SegmentKind::BC | SegmentKind::CD => c.acos(),
        SegmentKind::DE => 2.0 * PI - c.acos(),
    })
}

/// Three-point derivative on a possibly nonuniform grid.
fn d1(x: [f64; 3], y: [f64; 3]) -> f64 {
    let h0 = x[1] - x[0];
    let h1 = x[2] - x[1];
    (-h1 / (h0 * (h0 + h1))) * y[0] + ((h1 - h0) / (h0 * h1)) * y[1] + (h0 / (h1 * (h0 + h1))) * y[2]
}

/// Principal curvatures `(K_m, K_c)` in 1/m at `traj[index]`, by central differences.
pub fn principal_curvatures(traj: &[MembranePoint], index: usize, r0: f64) -> Result<(f64, f64)> {
    if index == 0 || index + 1 >= traj.len() {
        return Err(Error::Argument(format!(
            "curvature at index {index} needs a neighbor on each side (have {} samples)",
            traj.len()
        )));
    }
    let p = &traj[index];
    if p.psi.sin() == 0.0 {
        return Err(Error::Argument("curvature undefined on the axis".into()));
    }
    if p.segment.is_flat() {
        return Ok((0.0, 0.0));
    }
    let root = p.axial_rate()?;
    // Differencing the tangent angle stays well conditioned where omega -> +-lambda_m
    // (near B and D), unlike differencing lambda_m and omega separately.
    let angle = |q: &MembranePoint| -> Result<f64> { Ok(q.axial_rate()?.atan2(q.omega)) };
    let x = [traj[index - 1].psi, p.psi, traj[index + 1].psi];
    let dphi = d1(x, [angle(&traj[index - 1])?, angle(p)?, angle(&traj[index + 1])?]);
    let sign = if p.segment == SegmentKind::DE { -1.0 } else { 1.0 };
    let k_m = sign * dphi / (r0 * p.lambda_m);
    let k_c = root / (r0 * p.lambda_m * p.delta);
    Ok((k_m, k_c))
}

fn check_joints(segments: &[SegmentTrajectory]) -> Result<()> {
    for w in segments.windows(2) {
        let (a, b) = (w[0].points.last(), w[1].points.first());
        if let (Some(a), Some(b)) = (a, b) {
            let gap = (a.delta - b.delta).abs().max((a.psi - b.psi).abs());
            if gap > 1e-6 {
                return Err(Error::State(format!(
                    "discontinuity {gap:.3e} between {} and {}",
                    w[0].kind.label(),
                    w[1].kind.label()
                )));
            }
        }
    }
    Ok(())
}

fn eta_sign(kind: SegmentKind) -> f64 {
    match kind {
        SegmentKind::BC | SegmentKind::CD => 1.0,
        SegmentKind::DE => -1.0,
        SegmentKind::AB | SegmentKind::EF => 0.0,
    }
}

/// Deformed meridian `(rho, eta)`, with `eta = 0` on the plate contact.
///
/// Flat end segments are closed onto the symmetry axis with an extra vertex at the pole.
pub fn reconstruct_shape(segments: &[SegmentTrajectory], r0: f64) -> Result<Vec<ShapePoint>> {
    check_joints(segments)?;
    let mut out = Vec::with_capacity(segments.iter().map(|s| s.points.len()).sum::<usize>() + 2);
    let mut eta = 0.0;
    if segments.first().map(|s| s.kind) == Some(SegmentKind::AB) {
        out.push(ShapePoint { rho: 0.0, eta, psi: 0.0, segment: SegmentKind::AB });
    }
    for seg in segments {
        let s = eta_sign(seg.kind);
        let mut prev: Option<(f64, f64)> = None;
        for p in &seg.points {
            let rate = p.axial_rate()?;
            if let Some((psi0, r0rate)) = prev {
                eta += s * r0 * 0.5 * (rate + r0rate) * (p.psi - psi0);
            }
            prev = Some((p.psi, rate));
            out.push(ShapePoint { rho: r0 * p.delta, eta, psi: p.psi, segment: seg.kind });
        }
    }
    if segments.last().map(|s| s.kind) == Some(SegmentKind::EF) {
        out.push(ShapePoint { rho: 0.0, eta, psi: PI, segment: SegmentKind::EF });
    }
    Ok(out)
}

/// Axial extent `eta_E - eta_B` of the deformed cell.
pub fn axial_height(segments: &[SegmentTrajectory], r0: f64) -> Result<f64> {
    check_joints(segments)?;
    let mut h = 0.0;
    for seg in segments {
        let s = eta_sign(seg.kind);
        if s == 0.0 {
            continue;
        }
        h += s * r0 * trapezoid(&seg.points, |p| p.axial_rate())?;
    }
    Ok(h)
}

/// Volume enclosed by the bending regions, `pi r0^3 * integral of delta^2 sqrt(lambda_m^2 - omega^2)`.
pub fn enclosed_volume(segments: &[SegmentTrajectory], r0: f64) -> Result<f64> {
    let mut v = 0.0;
    for seg in segments {
        let s = eta_sign(seg.kind);
        if s == 0.0 {
            continue;
        }
        v += s * trapezoid(&seg.points, |p| Ok(p.delta * p.delta * p.axial_rate()?))?;
    }
    Ok(PI * r0.powi(3) * v)
}

fn trapezoid<F>(points: &[MembranePoint], f: F) -> Result<f64>
where
    F: Fn(&MembranePoint) -> Result<f64>,
{
    let mut acc = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for p in points {
        let y = f(p)?;
        if let Some((x0, y0)) = prev {
            acc += 0.5 * (y + y0) * (p.psi - x0);
        }
        prev = Some((p.psi, y));
    }
    Ok(acc)
}
