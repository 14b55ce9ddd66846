//! Run configuration: sectioned TOML with paper-style units, validated and
//! converted to SI problem setups.

use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use std::path::{Path, PathBuf};

use crate::equilibrium::{ProblemSetup, SolverControls, Strategy};
use crate::error::{Error, Result};
use crate::material::{MaterialModel, Preset, RateCoefficients, SpeedState, Stiffness};
use crate::trace::{FilterMode, DEFAULT_CUTOFF, DEFAULT_NOISE_WINDOW, PVDF_SENSITIVITY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellConfig {
    pub r0_um: f64,
    pub h_um: f64,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig { r0_um: 500.0, h_um: 3.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeedleConfig {
    pub rho0_um: f64,
}

impl Default for NeedleConfig {
    fn default() -> Self {
        NeedleConfig { rho0_um: 40.0 }
    }
}

/// Material: at most one of `preset`, `c1_MPa`, `k_MPa` (with optional `g`)
/// or `coefficients_file`; the simulation preset applies when none is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialConfig {
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(rename = "c1_MPa", skip_serializing_if = "Option::is_none")]
    pub c1_mpa: Option<f64>,
    #[serde(rename = "k_MPa", skip_serializing_if = "Option::is_none")]
    pub k_mpa: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<[f64; 3]>,
    /// Coefficient file written by `identify`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients_file: Option<PathBuf>,
    #[serde(rename = "sigma_ext_Pa")]
    pub sigma_ext_pa: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        MaterialConfig {
            alpha: 0.2,
            preset: None,
            c1_mpa: None,
            k_mpa: None,
            g: None,
            coefficients_file: None,
            sigma_ext_pa: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeedConfig {
    pub v_mm_s: f64,
    pub a_mm_s2: f64,
}

impl Default for SpeedConfig {
    fn default() -> Self {
        SpeedConfig { v_mm_s: 1.0, a_mm_s2: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub steps_per_segment: usize,
    pub pole_epsilon_rad: f64,
    pub tol_residual: f64,
    pub tol_volume: f64,
    pub max_iter: usize,
    pub strategy: Strategy,
    pub shooting_intervals: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let c = SolverControls::default();
        SolverConfig {
            steps_per_segment: c.steps_per_segment,
            pole_epsilon_rad: c.pole_epsilon,
            tol_residual: c.tol_residual,
            tol_volume: c.tol_volume,
            max_iter: c.max_iter,
            strategy: c.strategy,
            shooting_intervals: c.shooting_intervals,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub psi_b_start: f64,
    pub psi_b_end: f64,
    pub psi_b_points: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { psi_b_start: 0.05, psi_b_end: 0.8, psi_b_points: 30 }
    }
}

/// Force-sensor processing used by `ingest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceConfig {
    #[serde(rename = "sensitivity_mN_per_mV")]
    pub sensitivity_mn_per_mv: f64,
    pub cutoff_hz: f64,
    pub filter: FilterMode,
    pub noise_window_s: f64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            sensitivity_mn_per_mv: PVDF_SENSITIVITY,
            cutoff_hz: DEFAULT_CUTOFF,
            filter: FilterMode::ZeroPhase,
            noise_window_s: DEFAULT_NOISE_WINDOW,
        }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub cell: CellConfig,
    pub needle: NeedleConfig,
    pub material: MaterialConfig,
    pub speed: SpeedConfig,
    pub solver: SolverConfig,
    pub sweep: SweepConfig,
    pub trace: TraceConfig,
}

/// A `section.key = value` override; the value uses TOML syntax, bare words are strings.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub key: String,
    pub value: toml::Value,
}

impl Override {
    pub fn new(key: impl Into<String>, value: impl Into<toml::Value>) -> Self {
        Override { key: key.into(), value: value.into() }
    }

    /// Parses `section.key=value`.
    pub fn parse(text: &str) -> Result<Self> {
        let (key, raw) = text
            .split_once('=')
            .ok_or_else(|| Error::config(text, "override must look like section.key=value"))?;
        let (key, raw) = (key.trim(), raw.trim());
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        Ok(Override { key: key.to_string(), value })
    }
}

fn positive(key: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be positive, got {x}")))
    }
}

/// Machine-readable coefficient file as written by `identify`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientFile {
    #[serde(rename = "k_MPa")]
    pub k_mpa: [f64; 3],
    pub g: [f64; 3],
}

impl CoefficientFile {
    pub fn coefficients(&self) -> RateCoefficients {
        let [k0, k1, k2] = self.k_mpa;
        let [g0, g1, g2] = self.g;
        RateCoefficients::from_mpa(k0, k1, k2, g0, g1, g2)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let de = toml::de::Deserializer::parse(&text)
            .map_err(|e| Error::config("material.coefficients_file", e.message().to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            Error::config(format!("material.coefficients_file:{}", e.path()), e.inner().message().to_string())
        })
    }
}

impl RunConfig {
    /// Parses a document, applies overrides in order and validates the result.
    pub fn from_toml_str(text: &str, overrides: &[Override]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            Error::config("<document>", e.message().to_string())
        })?;
        for o in overrides {
            let (section, key) = o
                .key
                .split_once('.')
                .ok_or_else(|| Error::config(&o.key, "override key must be section.key"))?;
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            let toml::Value::Table(sec) = entry else {
                return Err(Error::config(section, "is not a section"));
            };
            sec.insert(key.to_string(), o.value.clone());
        }
        let merged = toml::to_string(&table).map_err(|e| Error::config("<document>", e.to_string()))?;
        let de = toml::de::Deserializer::parse(&merged)
            .map_err(|e| Error::config("<document>", e.message().to_string()))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::config(key, e.inner().message().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads an optional file; precedence is override > file > default.
    pub fn load(path: Option<&Path>, overrides: &[Override]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        positive("cell.r0_um", self.cell.r0_um)?;
        positive("cell.h_um", self.cell.h_um)?;
        positive("needle.rho0_um", self.needle.rho0_um)?;
        if self.needle.rho0_um >= self.cell.r0_um {
            return Err(Error::config("needle.rho0_um", "must be smaller than cell.r0_um"));
        }
        let m = &self.material;
        if !(m.alpha >= 0.0 && m.alpha.is_finite()) {
            return Err(Error::config("material.alpha", format!("must be non-negative, got {}", m.alpha)));
        }
        if !m.sigma_ext_pa.is_finite() {
            return Err(Error::config("material.sigma_ext_Pa", "must be finite"));
        }
        let sources = [m.preset.is_some(), m.c1_mpa.is_some(), m.k_mpa.is_some(), m.coefficients_file.is_some()];
        if sources.iter().filter(|&&s| s).count() > 1 {
            return Err(Error::config(
                "material",
                "set only one of preset, c1_MPa, k_MPa, coefficients_file",
            ));
        }
        if m.g.is_some() && m.k_mpa.is_none() {
            return Err(Error::config("material.g", "needs k_MPa"));
        }
        if let Some(name) = &m.preset {
            if Preset::from_name(name).is_none() {
                return Err(Error::config("material.preset", format!("unknown preset `{name}` (sim-iv, exp-vb)")));
            }
        }
        if let Some(c1) = m.c1_mpa {
            positive("material.c1_MPa", c1)?;
        }
        if m.k_mpa.is_some() {
            self.stiffness()?;
        }
        if !(self.speed.v_mm_s >= 0.0 && self.speed.v_mm_s.is_finite()) {
            return Err(Error::config("speed.v_mm_s", "must be non-negative"));
        }
        if !(self.speed.a_mm_s2 >= 0.0 && self.speed.a_mm_s2.is_finite()) {
            return Err(Error::config("speed.a_mm_s2", "must be non-negative"));
        }
        let s = &self.solver;
        if s.steps_per_segment < 16 {
            return Err(Error::config("solver.steps_per_segment", "must be at least 16"));
        }
        if !(s.pole_epsilon_rad > 0.0 && s.pole_epsilon_rad <= 1e-3) {
            return Err(Error::config("solver.pole_epsilon_rad", "must lie in (0, 1e-3]"));
        }
        positive("solver.tol_residual", s.tol_residual)?;
        positive("solver.tol_volume", s.tol_volume)?;
        if s.max_iter == 0 {
            return Err(Error::config("solver.max_iter", "must be at least 1"));
        }
        if s.shooting_intervals < 2 {
            return Err(Error::config("solver.shooting_intervals", "must be at least 2"));
        }
        let w = &self.sweep;
        for (key, x) in [("sweep.psi_b_start", w.psi_b_start), ("sweep.psi_b_end", w.psi_b_end)] {
            if !(x > 0.0 && x < FRAC_PI_2) {
                return Err(Error::config(key, format!("must lie in (0, pi/2), got {x}")));
            }
        }
        if w.psi_b_points == 0 {
            return Err(Error::config("sweep.psi_b_points", "must be at least 1"));
        }
        if w.psi_b_points > 1 && w.psi_b_end <= w.psi_b_start {
            return Err(Error::config("sweep.psi_b_end", "must exceed psi_b_start"));
        }
        let t = &self.trace;
        positive("trace.sensitivity_mN_per_mV", t.sensitivity_mn_per_mv)?;
        positive("trace.cutoff_hz", t.cutoff_hz)?;
        positive("trace.noise_window_s", t.noise_window_s)?;
        Ok(())
    }

    /// Stiffness model selected by the material section.
    pub fn stiffness(&self) -> Result<Stiffness> {
        let m = &self.material;
        if let Some(c1) = m.c1_mpa {
            return Ok(Stiffness::Fixed(c1 * 1e6));
        }
        let coeffs = if let Some([k0, k1, k2]) = m.k_mpa {
            match m.g {
                Some([g0, g1, g2]) => RateCoefficients::from_mpa(k0, k1, k2, g0, g1, g2),
                None => RateCoefficients::velocity_only(k0 * 1e6, k1 * 1e6, k2 * 1e6),
            }
        } else if let Some(path) = &m.coefficients_file {
            CoefficientFile::load(path)?.coefficients()
        } else {
            let name = m.preset.as_deref().unwrap_or(Preset::SimIv.name());
            Preset::from_name(name)
                .ok_or_else(|| Error::config("material.preset", format!("unknown preset `{name}`")))?
                .coefficients()
        };
        coeffs.validate().map_err(|e| Error::config("material", e.to_string()))?;
        Ok(Stiffness::RateDependent(coeffs))
    }

    pub fn speed_state(&self) -> Result<SpeedState> {
        SpeedState::new(self.speed.v_mm_s, self.speed.a_mm_s2)
    }

    /// SI problem setup at the configured speed.
    pub fn setup(&self) -> Result<ProblemSetup> {
        let s = &self.solver;
        let material = MaterialModel {
            alpha: self.material.alpha,
            h: self.cell.h_um / 1e6,
            surface_traction_m: self.material.sigma_ext_pa,
            stiffness: self.stiffness()?,
        };
        let controls = SolverControls {
            steps_per_segment: s.steps_per_segment,
            pole_epsilon: s.pole_epsilon_rad,
            tol_residual: s.tol_residual,
            tol_volume: s.tol_volume,
            max_iter: s.max_iter,
            strategy: s.strategy,
            shooting_intervals: s.shooting_intervals,
        };
        ProblemSetup::new(self.cell.r0_um / 1e6, self.needle.rho0_um / 1e6, material, self.speed_state()?, controls)
    }

    /// Evenly spaced contact angles of the sweep section.
    pub fn grid(&self) -> Vec<f64> {
        let w = &self.sweep;
        if w.psi_b_points == 1 {
            return vec![w.psi_b_start];
        }
        let n = w.psi_b_points - 1;
        (0..=n)
            .map(|i| w.psi_b_start + (w.psi_b_end - w.psi_b_start) * i as f64 / n as f64)
            .collect()
    }

    /// Resolved configuration as TOML; loading it back reproduces this config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        let s = c.setup().unwrap();
        assert_eq!(s, ProblemSetup::sim_iv(1.0));
    }

    #[test]
    fn needle_radius_from_file() {
        let c = RunConfig::from_toml_str("[needle]\nrho0_um = 50\n", &[]).unwrap();
        assert!((c.setup().unwrap().rho0 - 50e-6).abs() < 1e-18);
    }

    #[test]
    fn sweep_end_above_cap_is_rejected() {
        let e = RunConfig::from_toml_str("[sweep]\npsi_b_end = 2.0\n", &[]).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "sweep.psi_b_end"), "{e}");
    }

    #[test]
    fn unknown_and_mistyped_keys_name_the_key() {
        let e = RunConfig::from_toml_str("[cell]\nradius = 3\n", &[]).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key.starts_with("cell")), "{e}");
        let e = RunConfig::from_toml_str("[speed]\nv_mm_s = \"fast\"\n", &[]).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "speed.v_mm_s"), "{e}");
        let e = RunConfig::from_toml_str("[bogus]\nx = 1\n", &[]).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key.contains("bogus") || key == "."), "{e}");
    }

    #[test]
    fn overrides_beat_the_file() {
        let ov = [Override::parse("speed.v_mm_s=0.6").unwrap(), Override::parse("material.preset=exp-vb").unwrap()];
        let c = RunConfig::from_toml_str("[speed]\nv_mm_s = 0.2\n", &ov).unwrap();
        assert_eq!(c.speed.v_mm_s, 0.6);
        assert_eq!(c.material.preset.as_deref(), Some("exp-vb"));
        assert!(Override::parse("novalue").is_err());
    }

    #[test]
    fn conflicting_material_sources() {
        let e = RunConfig::from_toml_str("[material]\npreset = \"sim-iv\"\nc1_MPa = 0.2\n", &[]).unwrap_err();
        assert!(matches!(e, Error::Config { ref key, .. } if key == "material"));
        let c = RunConfig::from_toml_str("[material]\nc1_MPa = 0.2\n", &[]).unwrap();
        assert_eq!(c.stiffness().unwrap(), Stiffness::Fixed(0.2e6));
    }

    #[test]
    fn echo_round_trips() {
        let ov = [Override::new("sweep.psi_b_points", 7), Override::new("material.k_MPa", toml::Value::Array(
            [0.1, 0.2, 0.3].iter().map(|&x| toml::Value::Float(x)).collect(),
        ))];
        let c = RunConfig::from_toml_str("", &ov).unwrap();
        let back = RunConfig::from_toml_str(&c.to_toml(), &[]).unwrap();
        assert_eq!(c, back);
        assert_eq!(back.grid().len(), 7);
    }

    #[test]
    fn grid_endpoints() {
        let c = RunConfig::default();
        let g = c.grid();
        assert_eq!(g.len(), 30);
        assert_eq!(g[0], 0.05);
        assert!((g[29] - 0.8).abs() < 1e-15);
    }
}
