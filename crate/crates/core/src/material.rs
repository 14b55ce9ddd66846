//! Rate-dependent Mooney-Rivlin constitutive law for a thin incompressible membrane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MPA: f64 = 1.0e6;

/// Coefficients of the rate law `C1 = (k2 v^2 + k1 v + k0)(g0 + 1/(g1 + g2 a))`.
///
/// `k*` are stored in Pa per (mm/s)^n; `v` is in mm/s and `a` in mm/s^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateCoefficients {
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
    pub g0: f64,
    pub g1: f64,
    pub g2: f64,
}

impl RateCoefficients {
    /// Builds coefficients from the velocity terms in MPa.
    pub fn from_mpa(k0: f64, k1: f64, k2: f64, g0: f64, g1: f64, g2: f64) -> Self {
        RateCoefficients {
            k0: k0 * MPA,
            k1: k1 * MPA,
            k2: k2 * MPA,
            g0,
            g1,
            g2,
        }
    }

    /// Velocity-only model: the acceleration factor is identically one.
    pub fn velocity_only(k0: f64, k1: f64, k2: f64) -> Self {
        RateCoefficients { k0, k1, k2, g0: 0.0, g1: 1.0, g2: 0.0 }
    }

    /// Velocity coefficients in MPa, as printed in reports.
    pub fn k_mpa(&self) -> [f64; 3] {
        [self.k0 / MPA, self.k1 / MPA, self.k2 / MPA]
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.k0, self.k1, self.k2, self.g0, self.g1, self.g2];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("rate coefficients must be finite".into()));
        }
        if self.k0 <= 0.0 {
            return Err(Error::Domain(format!("k0 must be positive, got {}", self.k0)));
        }
        if self.k2 < 0.0 {
            return Err(Error::Domain(format!("k2 must be nonnegative, got {}", self.k2)));
        }
        if self.g1 <= 0.0 || self.g2 < 0.0 {
            return Err(Error::Domain(format!(
                "need g1 > 0 and g2 >= 0, got g1 = {}, g2 = {}",
                self.g1, self.g2
            )));
        }
        Ok(())
    }

    /// Velocity factor `k2 v^2 + k1 v + k0` in Pa.
    pub fn velocity_factor(&self, v: f64) -> f64 {
        (self.k2 * v + self.k1) * v + self.k0
    }

    /// Reduction factor `g0 + 1/(g1 + g2 a)`.
    pub fn acceleration_factor(&self, a: f64) -> f64 {
        self.g0 + 1.0 / (self.g1 + self.g2 * a)
    }
}

/// Injection kinematics: velocity in mm/s, acceleration in mm/s^2.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpeedState {
    pub v: f64,
    pub a: f64,
}

impl SpeedState {
    pub fn new(v: f64, a: f64) -> Result<Self> {
        if !(v >= 0.0 && v.is_finite()) || !(a >= 0.0 && a.is_finite()) {
            return Err(Error::Domain(format!("speed must be nonnegative, got v = {v}, a = {a}")));
        }
        Ok(SpeedState { v, a })
    }
}

/// Elastic coefficient `C1` in Pa for the given speed.
pub fn elastic_coefficient(speed: SpeedState, coeffs: &RateCoefficients) -> Result<f64> {
    coeffs.validate()?;
    let denom = coeffs.g1 + coeffs.g2 * speed.a;
    if denom <= 0.0 {
        return Err(Error::Domain(format!("g1 + g2 a = {denom} is not positive")));
    }
    let c1 = coeffs.velocity_factor(speed.v) * coeffs.acceleration_factor(speed.a);
    if !c1.is_finite() || c1 <= 0.0 {
        return Err(Error::Domain(format!("elastic coefficient {c1} is not positive")));
    }
    Ok(c1)
}

/// Named coefficient sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// Coefficients used for the simulation study.
    SimIv,
    /// Coefficients identified from the zebrafish experiments.
    ExpVb,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::SimIv => "sim-iv",
            Preset::ExpVb => "exp-vb",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "sim-iv" => Some(Preset::SimIv),
            "exp-vb" => Some(Preset::ExpVb),
            _ => None,
        }
    }

    pub fn coefficients(self) -> RateCoefficients {
        match self {
            Preset::SimIv => RateCoefficients::from_mpa(0.057, 0.0495, 0.0875, 0.6066, 2.5333, 3.3922),
            Preset::ExpVb => RateCoefficients::from_mpa(0.0624, 0.0359, 0.0917, 0.6068, 2.5358, 3.3214),
        }
    }
}

/// Where the elastic coefficient comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Stiffness {
    /// Rate-independent model with a constant `C1` in Pa.
    Fixed(f64),
    RateDependent(RateCoefficients),
}

/// Material description before the speed is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialModel {
    pub alpha: f64,
    /// Membrane thickness in m.
    pub h: f64,
    /// External meridian traction in Pa.
    pub surface_traction_m: f64,
    pub stiffness: Stiffness,
}

impl MaterialModel {
    pub fn preset(preset: Preset) -> Self {
        MaterialModel {
            alpha: 0.2,
            h: 3.0e-6,
            surface_traction_m: 0.0,
            stiffness: Stiffness::RateDependent(preset.coefficients()),
        }
    }

    pub fn fixed(c1: f64, alpha: f64, h: f64) -> Self {
        MaterialModel { alpha, h, surface_traction_m: 0.0, stiffness: Stiffness::Fixed(c1) }
    }

    /// Evaluates the stiffness at `speed`; a fixed `C1` ignores the speed entirely.
    pub fn at_speed(&self, speed: SpeedState) -> Result<MaterialParams> {
        let c1 = match self.stiffness {
            Stiffness::Fixed(c1) => c1,
            Stiffness::RateDependent(ref k) => elastic_coefficient(speed, k)?,
        };
        MaterialParams::new(self.alpha, c1, self.h, self.surface_traction_m)
    }
}

/// Resolved material constants: `alpha`, `c1` in Pa, `h` in m, traction in Pa.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub alpha: f64,
    pub c1: f64,
    pub h: f64,
    pub surface_traction_m: f64,
}

/// Tensions and their stretch derivatives, the inputs the ODEs need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tensions {
    pub t_m: f64,
    pub t_c: f64,
    pub f1: f64,
    pub f2: f64,
}

impl Tensions {
    pub fn f3(&self) -> f64 {
        self.t_c - self.t_m
    }
}

/// Full constitutive response at one stretch pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstitutiveState {
    pub i1: f64,
    pub i2: f64,
    pub w: f64,
    pub sigma_m: f64,
    pub sigma_c: f64,
    pub t_m: f64,
    pub t_c: f64,
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
}

impl MaterialParams {
    pub fn new(alpha: f64, c1: f64, h: f64, surface_traction_m: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::Domain(format!("alpha must be nonnegative, got {alpha}")));
        }
        if !(c1 > 0.0) || !c1.is_finite() {
            return Err(Error::Domain(format!("c1 must be positive, got {c1}")));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Domain(format!("thickness must be positive, got {h}")));
        }
        if !surface_traction_m.is_finite() {
            return Err(Error::Domain("surface traction must be finite".into()));
        }
        Ok(MaterialParams { alpha, c1, h, surface_traction_m })
    }

    /// Young's modulus implied by `C1 = E / (6 (1 + alpha))`.
    pub fn youngs_modulus(&self) -> f64 {
        6.0 * self.c1 * (1.0 + self.alpha)
    }

    /// Strain energy density in Pa.
    pub fn strain_energy(&self, lm: f64, lc: f64) -> f64 {
        let (i1, i2) = invariants(lm, lc);
        self.c1 * ((i1 - 3.0) + self.alpha * (i2 - 3.0))
    }

    /// Closed-form tensions and derivatives; assumes positive stretches.
    #[inline]
    pub fn tensions(&self, lm: f64, lc: f64) -> Tensions {
        let k = 2.0 * self.c1 * self.h;
        let a = self.alpha;
        let lm2 = lm * lm;
        let lc2 = lc * lc;
        let lm3 = lm2 * lm;
        let lc3 = lc2 * lc;
        let lm4 = lm2 * lm2;
        let lc4 = lc2 * lc2;
        let t_m = k * (lm / lc - 1.0 / (lm3 * lc3) + a * (lm * lc - 1.0 / (lm3 * lc)));
        let t_c = k * (lc / lm - 1.0 / (lm3 * lc3) + a * (lm * lc - 1.0 / (lm * lc3)));
        let f1 = k * (1.0 / lc + 3.0 / (lm4 * lc3) + a * (lc + 3.0 / (lm4 * lc)));
        let f2 = k * (-lm / lc2 + 3.0 / (lm3 * lc4) + a * (lm + 1.0 / (lm3 * lc2)));
        Tensions { t_m, t_c, f1, f2 }
    }
}

fn invariants(lm: f64, lc: f64) -> (f64, f64) {
    let lm2 = lm * lm;
    let lc2 = lc * lc;
    let i1 = lm2 + lc2 + 1.0 / (lm2 * lc2);
    let i2 = lm2 * lc2 + 1.0 / lm2 + 1.0 / lc2;
    (i1, i2)
}

/// Evaluates invariants, energy, stresses, tensions and tension derivatives.
pub fn constitutive_eval(lambda_m: f64, lambda_c: f64, mat: &MaterialParams) -> Result<ConstitutiveState> {
    if !(lambda_m > 0.0 && lambda_c > 0.0) || !lambda_m.is_finite() || !lambda_c.is_finite() {
        return Err(Error::Domain(format!(
            "stretches must be positive, got ({lambda_m}, {lambda_c})"
        )));
    }
    let (i1, i2) = invariants(lambda_m, lambda_c);
    let w = mat.c1 * ((i1 - 3.0) + mat.alpha * (i2 - 3.0));
    let lm2 = lambda_m * lambda_m;
    let lc2 = lambda_c * lambda_c;
    let j = 1.0 / (lm2 * lc2);
    let sigma_m = 2.0 * mat.c1 * ((lm2 - j) + mat.alpha * (lm2 * lc2 - 1.0 / lm2));
    let sigma_c = 2.0 * mat.c1 * ((lc2 - j) + mat.alpha * (lm2 * lc2 - 1.0 / lc2));
    let t = mat.tensions(lambda_m, lambda_c);
    Ok(ConstitutiveState {
        i1,
        i2,
        w,
        sigma_m,
        sigma_c,
        t_m: t.t_m,
        t_c: t.t_c,
        f1: t.f1,
        f2: t.f2,
        f3: t.f3(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn mat() -> MaterialParams {
        MaterialParams::new(0.2, 0.1e6, 3.0e-6, 0.0).unwrap()
    }

    #[test]
    fn rate_law_presets() {
        let sim = Preset::SimIv.coefficients();
        let exp = Preset::ExpVb.coefficients();
        let c = elastic_coefficient(SpeedState { v: 1.0, a: 0.0 }, &sim).unwrap();
        assert!((c / MPA - 0.1943).abs() < 1e-4);
        let c = elastic_coefficient(SpeedState { v: 0.0, a: 0.0 }, &sim).unwrap();
        assert!((c / MPA - 0.0571).abs() < 1e-4);
        let c = elastic_coefficient(SpeedState { v: 2.0, a: 0.0 }, &exp).unwrap();
        assert!((c / MPA - 0.5016).abs() < 1e-4);
    }

    #[test]
    fn rate_law_rejects_bad_coefficients() {
        let mut k = Preset::SimIv.coefficients();
        k.g1 = 0.0;
        assert!(matches!(elastic_coefficient(SpeedState::default(), &k), Err(Error::Domain(_))));
        let mut k = Preset::SimIv.coefficients();
        k.k0 = -1.0;
        assert!(elastic_coefficient(SpeedState::default(), &k).is_err());
    }

    #[test]
    fn fixed_stiffness_ignores_speed() {
        let m = MaterialModel::fixed(0.15e6, 0.2, 3e-6);
        let a = m.at_speed(SpeedState { v: 0.2, a: 0.0 }).unwrap();
        let b = m.at_speed(SpeedState { v: 5.0, a: 3.0 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn undeformed_state_is_stress_free() {
        let s = constitutive_eval(1.0, 1.0, &mat()).unwrap();
        assert_eq!(s.i1, 3.0);
        assert_eq!(s.i2, 3.0);
        assert_eq!(s.w, 0.0);
        for x in [s.sigma_m, s.sigma_c, s.t_m, s.t_c, s.f3] {
            assert!(x.abs() < 1e-20);
        }
    }

    #[test]
    fn equibiaxial_reference_value() {
        // Symbolic oracle (sympy on W): sigma = 0.1309034577 MPa, T = 0.3245540273 N/m.
        let s = constitutive_eval(1.1, 1.1, &mat()).unwrap();
        assert_relative_eq!(s.sigma_m / MPA, 0.1309034577, max_relative = 1e-9);
        assert_eq!(s.sigma_m, s.sigma_c);
        assert_relative_eq!(s.t_m, s.t_c, max_relative = 1e-14);
        assert_relative_eq!(s.t_m, 0.3245540273, max_relative = 1e-9);
        assert!(s.f3.abs() < 1e-15);
    }

    #[test]
    fn derivative_oracle_at_spec_point() {
        let m = mat();
        let (lm, lc, e) = (1.2, 1.1, 1e-6);
        let t = m.tensions(lm, lc);
        let d1 = (m.tensions(lm + e, lc).t_m - m.tensions(lm - e, lc).t_m) / (2.0 * e);
        let d2 = (m.tensions(lm, lc + e).t_m - m.tensions(lm, lc - e).t_m) / (2.0 * e);
        assert_relative_eq!(t.f1, d1, max_relative = 1e-6);
        assert_relative_eq!(t.f2, d2, max_relative = 1e-6);
    }

    #[test]
    fn swap_symmetry() {
        let m = mat();
        let a = constitutive_eval(1.3, 0.9, &m).unwrap();
        let b = constitutive_eval(0.9, 1.3, &m).unwrap();
        assert_relative_eq!(a.sigma_m, b.sigma_c, max_relative = 1e-14);
        assert_relative_eq!(a.t_m, b.t_c, max_relative = 1e-14);
    }

    #[test]
    fn rejects_nonpositive_stretch() {
        assert!(constitutive_eval(0.0, 1.0, &mat()).is_err());
        assert!(constitutive_eval(1.0, -2.0, &mat()).is_err());
    }

    #[test]
    fn youngs_modulus_relation() {
        assert_relative_eq!(mat().youngs_modulus(), 6.0 * 0.1e6 * 1.2);
    }
}
