//! Command-line front end: argument parsing, dispatch and output files.

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use std::path::{Path, PathBuf};

use crate::config::{CoefficientFile, Override, RunConfig};
use crate::equilibrium::{solve_equilibrium, EquilibriumSolution, ProblemSetup};
use crate::error::{Error, Result};
use crate::geometry::reconstruct_shape;
use crate::identify::{
    build_rate_model, AcceleratedExperiment, ConstantVelocityExperiment, MeasuredPoint, DEFAULT_BRACKET,
};
use crate::material::SpeedState;
use crate::report::{self, OutputDir, ResultEnvelope};
use crate::response::{distribution_profile, force_at_deformation, force_deformation_curves};
use crate::trace::{self, FeedProfile, FilterMode, RawTrace};

#[derive(Debug, Parser)]
#[command(name = "cellmech", version, about = "Rate-dependent membrane model of cell microinjection")]
pub struct Cli {
    /// TOML configuration file; omitted keys take their defaults.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set needle.rho0_um=50`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(long, short, default_value = "out", global = true)]
    pub out: PathBuf,
    /// Also write JSON mirrors of every table and print the envelope as JSON.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct SpeedArgs {
    /// Injection velocity, mm/s.
    #[arg(long)]
    pub v: Option<f64>,
    /// Injection acceleration, mm/s^2.
    #[arg(long)]
    pub a: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one equilibrium state.
    Solve {
        /// Contact angle at the plate edge, rad.
        #[arg(long, default_value_t = 0.4)]
        psi_b: f64,
        #[command(flatten)]
        speed: SpeedArgs,
        /// Also write the tension and stress profile.
        #[arg(long)]
        profile: bool,
        /// Also write the deformed meridian.
        #[arg(long)]
        shape: bool,
    },
    /// Sweep the contact angle at one or more velocities.
    Curve {
        /// Velocities, mm/s; repeat for several curves.
        #[arg(long = "v")]
        v: Vec<f64>,
        /// Acceleration, mm/s^2.
        #[arg(long)]
        a: Option<f64>,
    },
    /// Tension and stress along the meridian.
    Profile {
        #[arg(long, default_value_t = 0.4)]
        psi_b: f64,
        #[command(flatten)]
        speed: SpeedArgs,
    },
    /// Deformed meridian coordinates.
    Shape {
        #[arg(long, default_value_t = 0.4)]
        psi_b: f64,
        #[command(flatten)]
        speed: SpeedArgs,
    },
    /// Identify rate-law coefficients from measured curves.
    Identify {
        /// Experiment table: id, kind, v_mm_s, a_mm_s2, curve.
        experiments: PathBuf,
        /// Search bracket for C1, MPa.
        #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
        bracket_mpa: Option<Vec<f64>>,
    },
    /// Convert, filter and segment a force-sensor trace.
    Ingest {
        /// Trace table: time_s, voltage_mV.
        trace: PathBuf,
        #[command(flatten)]
        speed: SpeedArgs,
        /// Encoder log (time_s, position_mm) overriding the commanded feed.
        #[arg(long)]
        encoder: Option<PathBuf>,
        /// Low-pass cutoff, Hz.
        #[arg(long)]
        cutoff: Option<f64>,
        /// Filter with a single causal pass instead of forward-backward.
        #[arg(long)]
        single_pass: bool,
    },
    /// Force at a target deformation.
    Predict {
        /// Target deformation, um.
        #[arg(long)]
        d_um: f64,
        #[command(flatten)]
        speed: SpeedArgs,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve { .. } => "solve",
            Command::Curve { .. } => "curve",
            Command::Profile { .. } => "profile",
            Command::Shape { .. } => "shape",
            Command::Identify { .. } => "identify",
            Command::Ingest { .. } => "ingest",
            Command::Predict { .. } => "predict",
        }
    }

    /// Flag values that override configuration keys.
    fn overrides(&self) -> Vec<Override> {
        let speed = |s: &SpeedArgs| {
            let mut o = Vec::new();
            if let Some(v) = s.v {
                o.push(Override::new("speed.v_mm_s", v));
            }
            if let Some(a) = s.a {
                o.push(Override::new("speed.a_mm_s2", a));
            }
            o
        };
        match self {
            Command::Solve { speed: s, .. }
            | Command::Profile { speed: s, .. }
            | Command::Shape { speed: s, .. }
            | Command::Predict { speed: s, .. } => speed(s),
            Command::Curve { v, a } => speed(&SpeedArgs { v: (v.len() == 1).then(|| v[0]), a: *a }),
            Command::Ingest { speed: s, cutoff, single_pass, .. } => {
                let mut o = speed(s);
                if let Some(c) = cutoff {
                    o.push(Override::new("trace.cutoff_hz", *c));
                }
                if *single_pass {
                    o.push(Override::new("trace.filter", "single_pass"));
                }
                o
            }
            Command::Identify { .. } => Vec::new(),
        }
    }
}

/// Resolves the configuration: flag > `--set` > file > default.
pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut ov = cli.overrides.iter().map(|s| Override::parse(s)).collect::<Result<Vec<_>>>()?;
    ov.extend(cli.command.overrides());
    RunConfig::load(cli.config.as_deref(), &ov)
}

fn solution_summary(s: &EquilibriumSolution, setup: &ProblemSetup) -> serde_json::Value {
    json!({
        "psi_b_rad": s.psi_b,
        "force_uN": s.force * 1e6,
        "deformation_um": s.deformation * 1e6,
        "pressure_Pa": s.unknowns.p,
        "lambda_a": s.unknowns.lambda_a,
        "lambda_f": s.unknowns.lambda_f,
        "psi_c_rad": s.psi_c,
        "psi_d_rad": s.psi_d,
        "psi_e_rad": s.psi_e,
        "contact_radius_um": s.contact_radius() * 1e6,
        "c1_MPa": s.material.c1 / 1e6,
        "v_mm_s": setup.speed.v,
        "a_mm_s2": setup.speed.a,
    })
}

fn convergence(s: &EquilibriumSolution, setup: &ProblemSetup) -> serde_json::Value {
    let r = &s.residuals;
    let c = &setup.controls;
    json!({
        "iterations": s.iterations,
        "shooting_residual": r.shooting,
        "volume_residual": r.volume,
        "bc_b": r.bc_b,
        "bc_c": r.bc_c,
        "bc_d": r.bc_d,
        "bc_e": r.bc_e,
        "continuity": r.continuity,
        "tol_residual": c.tol_residual,
        "tol_volume": c.tol_volume,
        "within_tolerance": r.shooting <= c.tol_residual && r.volume <= c.tol_volume,
    })
}

/// Output of one dispatched command.
#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub envelope: ResultEnvelope,
}

fn read_table(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Io(format!("{}: missing column `{name}`", path.display())))
}

fn number(rec: &csv::StringRecord, i: usize, path: &Path) -> Result<f64> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse::<f64>().map_err(|_| {
        let line = rec.position().map_or(0, |p| p.line());
        Error::Io(format!("{}:{line}: `{raw}` is not a number", path.display()))
    })
}

/// Reads numeric columns by name.
fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rd = read_table(path)?;
    let headers = rd.headers()?.clone();
    let idx = names.iter().map(|n| column(&headers, n, path)).collect::<Result<Vec<_>>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for rec in rd.records() {
        let rec = rec?;
        for (c, &i) in cols.iter_mut().zip(&idx) {
            c.push(number(&rec, i, path)?);
        }
    }
    Ok(cols)
}

/// Measured curve file: `d_um`, `F_uN`.
pub fn read_curve(path: &Path) -> Result<Vec<MeasuredPoint>> {
    let cols = read_columns(path, &["d_um", "F_uN"])?;
    Ok(cols[0]
        .iter()
        .zip(&cols[1])
        .map(|(d, f)| MeasuredPoint { deformation: d / 1e6, force: f / 1e6 })
        .collect())
}

/// Experiment table with curve paths relative to the table itself.
pub fn read_experiments(path: &Path) -> Result<(Vec<ConstantVelocityExperiment>, Vec<AcceleratedExperiment>, Vec<String>)> {
    let mut rd = read_table(path)?;
    let headers = rd.headers()?.clone();
    let [id, kind, v, a, curve] =
        ["id", "kind", "v_mm_s", "a_mm_s2", "curve"].map(|n| column(&headers, n, path));
    let (id, kind, v, a, curve) = (id?, kind?, v?, a?, curve?);
    let base = path.parent().unwrap_or(Path::new("."));
    let (mut cv, mut acc, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    let mut accel_ids = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let pts = read_curve(&base.join(rec.get(curve).unwrap_or("")))?;
        let name = rec.get(id).unwrap_or("").to_string();
        match rec.get(kind).unwrap_or("") {
            "const_v" => {
                cv.push(ConstantVelocityExperiment { v: number(&rec, v, path)?, curve: pts });
                ids.push(name);
            }
            "accel" => {
                acc.push(AcceleratedExperiment { a: number(&rec, a, path)?, v_at_puncture: number(&rec, v, path)?, curve: pts });
                accel_ids.push(name);
            }
            other => {
                return Err(Error::Io(format!(
                    "{}: experiment `{name}` has kind `{other}` (expected const_v or accel)",
                    path.display()
                )))
            }
        }
    }
    ids.extend(accel_ids);
    Ok((cv, acc, ids))
}

#[derive(Serialize)]
#[allow(non_snake_case)]
struct MarkerReport {
    t_contact_s: f64,
    t_puncture_s: f64,
    t_relax_end_s: f64,
    t_retract_s: f64,
    peak_force_mN: f64,
    baseline_mN: f64,
    noise_mN: f64,
    sample_rate_hz: f64,
    sensitivity_mN_per_mV: f64,
    filter: String,
    deformation_um: f64,
    v_at_puncture_mm_s: f64,
}

/// Runs a command and writes its outputs.
pub fn dispatch(cli: &Cli) -> Result<Outcome> {
    let cfg = load_config(cli)?;
    let mut out = OutputDir::create(&cli.out, cli.json)?;
    out.text("config.toml", "config", &cfg.to_toml())?;
    let cmd = &cli.command;
    let (inputs, conv, summary) = match cmd {
        Command::Solve { psi_b, profile, shape, .. } => {
            let setup = cfg.setup()?;
            let s = solve_equilibrium(*psi_b, &setup, None)?;
            if *profile {
                out.table("profile", &report::profile_table(&distribution_profile(&s)?))?;
            }
            if *shape {
                out.table("shape", &report::shape_table(&reconstruct_shape(&s.segments, s.r0)?))?;
            }
            out.json_value("solution.json", &json!({"solution": solution_summary(&s, &setup), "convergence": convergence(&s, &setup)}))?;
            (json!({"psi_b_rad": psi_b}), convergence(&s, &setup), solution_summary(&s, &setup))
        }
        Command::Profile { psi_b, .. } | Command::Shape { psi_b, .. } => {
            let setup = cfg.setup()?;
            let s = solve_equilibrium(*psi_b, &setup, None)?;
            if matches!(cmd, Command::Profile { .. }) {
                let p = distribution_profile(&s)?;
                out.table("profile", &report::profile_table(&p))?;
            } else {
                out.table("shape", &report::shape_table(&reconstruct_shape(&s.segments, s.r0)?))?;
            }
            (json!({"psi_b_rad": psi_b}), convergence(&s, &setup), solution_summary(&s, &setup))
        }
        Command::Curve { v, .. } => {
            let setup = cfg.setup()?;
            let speeds = if v.is_empty() { vec![cfg.speed.v_mm_s] } else { v.clone() };
            let states = speeds
                .iter()
                .map(|&x| SpeedState::new(x, cfg.speed.a_mm_s2))
                .collect::<Result<Vec<_>>>()?;
            let grid = cfg.grid();
            let curves = force_deformation_curves(&grid, &setup, &states)?;
            let mut per = Vec::new();
            for c in &curves {
                let stem = format!("curve_v{}", c.speed.v);
                out.table(&stem, &report::curve_table(c))?;
                let range = c.deformation_range().map(|(a, b)| [a * 1e6, b * 1e6]);
                per.push(json!({
                    "v_mm_s": c.speed.v,
                    "points": c.records.len(),
                    "converged": c.converged_count(),
                    "monotone": c.is_monotone(),
                    "deformation_range_um": range,
                }));
            }
            (json!({"v_mm_s": speeds}), json!({"curves": per.clone()}), json!({"curves": per}))
        }
        Command::Identify { experiments, bracket_mpa } => {
            let (cv, acc, ids) = read_experiments(experiments)?;
            let bracket = match bracket_mpa.as_deref() {
                Some([lo, hi]) => (lo * 1e6, hi * 1e6),
                _ => DEFAULT_BRACKET,
            };
            let fit = build_rate_model(&cv, &acc, &cfg.setup()?, bracket)?;
            let coeff = CoefficientFile {
                k_mpa: [fit.velocity.k0, fit.velocity.k1, fit.velocity.k2],
                g: [fit.acceleration.g0, fit.acceleration.g1, fit.acceleration.g2],
            };
            let coeff_text = toml::to_string(&coeff).map_err(|e| Error::Io(e.to_string()))?;
            out.text("coefficients.toml", "coefficients", &coeff_text)?;
            let mut t = report::Table::new(&["id", "kind", "v_mm_s", "a_mm_s2", "c1_MPa", "rms_uN", "iterations"]);
            let rows = cv
                .iter()
                .map(|e| ("const_v", e.v, 0.0))
                .chain(acc.iter().map(|e| ("accel", e.v_at_puncture, e.a)));
            for ((id, (kind, v, a)), c) in ids.iter().zip(rows).zip(&fit.calibrations) {
                t.push(vec![
                    id.as_str().into(),
                    kind.into(),
                    v.into(),
                    a.into(),
                    (c.c1 / 1e6).into(),
                    (c.residual * 1e6).into(),
                    (c.iterations as f64).into(),
                ]);
            }
            out.table("calibrations", &t)?;
            let report_text = format!(
                "# Identified rate law: C1 = (k2 v^2 + k1 v + k0)(g0 + 1/(g1 + g2 a))\n\
                 # v in mm/s, a in mm/s^2, C1 in MPa\n{coeff_text}\
                 constant_velocity_experiments = {}\naccelerated_experiments = {}\n",
                cv.len(),
                acc.len()
            );
            out.text("identify.txt", "report", &report_text)?;
            let worst = fit.calibrations.iter().map(|c| c.residual * 1e6).fold(0.0, f64::max);
            (
                json!({"experiments": experiments}),
                json!({"calibrations": fit.calibrations.len(), "max_rms_uN": worst}),
                json!({"k_MPa": coeff.k_mpa, "g": coeff.g}),
            )
        }
        Command::Ingest { trace: path, encoder, .. } => {
            let cols = read_columns(path, &["time_s", "voltage_mV"])?;
            let raw = RawTrace::new(cols[0].clone(), cols[1].clone())?;
            let t = &cfg.trace;
            let force = trace::voltage_to_force(&raw, t.sensitivity_mn_per_mv)?;
            let filtered = trace::lowpass_filter_with(&force, t.cutoff_hz, t.filter)?;
            let markers = trace::detect_phases(&filtered, t.noise_window_s)?;
            let feed = match encoder {
                Some(p) => {
                    let c = read_columns(p, &["time_s", "position_mm"])?;
                    FeedProfile::Logged { time: c[0].clone(), position: c[1].clone() }
                }
                None if cfg.speed.a_mm_s2 > 0.0 => FeedProfile::Accelerated { v0: cfg.speed.v_mm_s, a: cfg.speed.a_mm_s2 },
                None => FeedProfile::Constant { v: cfg.speed.v_mm_s },
            };
            let (d, vp) = trace::deformation_from_feed(&markers, &feed)?;
            out.table("trace", &report::trace_table(&filtered, &markers))?;
            let mode = match t.filter {
                FilterMode::ZeroPhase => "zero_phase",
                FilterMode::SinglePass => "single_pass",
            };
            let rep = MarkerReport {
                t_contact_s: markers.t_contact,
                t_puncture_s: markers.t_puncture,
                t_relax_end_s: markers.t_relax_end,
                t_retract_s: markers.t_retract,
                peak_force_mN: markers.peak_force,
                baseline_mN: markers.baseline,
                noise_mN: markers.noise,
                sample_rate_hz: filtered.sample_rate,
                sensitivity_mN_per_mV: filtered.sensitivity,
                filter: format!("butterworth order 2, {} Hz, {mode}", t.cutoff_hz),
                deformation_um: d * 1e6,
                v_at_puncture_mm_s: vp,
            };
            out.text("markers.toml", "report", &toml::to_string(&rep).map_err(|e| Error::Io(e.to_string()))?)?;
            let summary = serde_json::to_value(&rep)?;
            (json!({"trace": path, "encoder": encoder}), json!({"samples": filtered.time.len()}), summary)
        }
        Command::Predict { d_um, .. } => {
            let setup = cfg.setup()?;
            let (f, psi) = force_at_deformation(d_um / 1e6, &setup)?;
            let summary = json!({
                "deformation_um": d_um,
                "force_uN": f * 1e6,
                "psi_b_rad": psi,
                "v_mm_s": setup.speed.v,
                "a_mm_s2": setup.speed.a,
                "c1_MPa": setup.material_params()?.c1 / 1e6,
            });
            out.json_value("prediction.json", &summary)?;
            (json!({"d_um": d_um}), json!({"matched": true}), summary)
        }
    };
    let envelope = ResultEnvelope::new(cmd.name(), inputs, &cfg, out.manifest().to_vec(), conv, summary);
    let body = serde_json::to_string_pretty(&envelope)? + "\n";
    std::fs::write(out.root().join("envelope.json"), body)?;
    Ok(Outcome { envelope })
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { crate::Category::Config.exit_code() } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(o) => {
            let text = if cli.json {
                serde_json::to_string_pretty(&o.envelope)
            } else {
                serde_json::to_string_pretty(&json!({
                    "summary": o.envelope.summary,
                    "convergence": o.envelope.convergence,
                }))
            };
            println!("{}", text.unwrap_or_default());
            0
        }
        Err(e) => {
            let cat = e.category();
            if cli.json {
                println!("{}", json!({"error": {"category": cat.as_str(), "message": e.to_string()}}));
            }
            eprintln!("error [{}]: {e}", cat.as_str());
            cat.exit_code()
        }
    }
}
