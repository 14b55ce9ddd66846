//! Tabular outputs with unit-suffixed headers, JSON mirrors and the run envelope.

use serde::Serialize;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::geometry::ShapePoint;
use crate::response::{DistributionProfile, ResponseCurve};
use crate::trace::{ForceTrace, PhaseMarkers};

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) => format!("{x}"),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }

    fn json(&self) -> serde_json::Value {
        match self {
            // JSON has no NaN; unconverged values become null.
            Cell::Num(x) => serde_json::Number::from_f64(*x).map_or(serde_json::Value::Null, Into::into),
            Cell::Text(s) => s.clone().into(),
            Cell::Bool(b) => (*b).into(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Bool(b)
    }
}

/// Column-named rows; every header carries its unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(headers: &[&'static str]) -> Self {
        Table { headers: headers.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r.iter().map(Cell::csv))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    /// Array of objects keyed by header.
    pub fn to_json(&self) -> serde_json::Value {
        self.rows
            .iter()
            .map(|r| {
                self.headers
                    .iter()
                    .zip(r)
                    .map(|(h, c)| (h.to_string(), c.json()))
                    .collect::<serde_json::Map<_, _>>()
                    .into()
            })
            .collect::<Vec<serde_json::Value>>()
            .into()
    }
}

pub fn curve_table(curve: &ResponseCurve) -> Table {
    let mut t = Table::new(&[
        "psi_b_rad",
        "force_uN",
        "deformation_um",
        "pressure_Pa",
        "lambda_a",
        "lambda_f",
        "contact_radius_um",
        "converged",
        "note",
    ]);
    for r in &curve.records {
        t.push(vec![
            r.psi_b.into(),
            (r.force * 1e6).into(),
            (r.deformation * 1e6).into(),
            r.pressure.into(),
            r.lambda_a.into(),
            r.lambda_f.into(),
            (r.contact_radius * 1e6).into(),
            r.converged.into(),
            r.note.as_deref().unwrap_or("").into(),
        ]);
    }
    t
}

pub fn profile_table(profile: &DistributionProfile) -> Table {
    let mut t = Table::new(&[
        "psi_rad",
        "segment",
        "lambda_m",
        "lambda_c",
        "Tm_N_per_m",
        "Tc_N_per_m",
        "sigma_m_MPa",
        "sigma_c_MPa",
    ]);
    for s in &profile.samples {
        t.push(vec![
            s.psi.into(),
            s.segment.label().into(),
            s.lambda_m.into(),
            s.lambda_c.into(),
            s.t_m.into(),
            s.t_c.into(),
            (s.sigma_m / 1e6).into(),
            (s.sigma_c / 1e6).into(),
        ]);
    }
    t
}

pub fn shape_table(shape: &[ShapePoint]) -> Table {
    let mut t = Table::new(&["psi_rad", "rho_um", "eta_um", "segment"]);
    for p in shape {
        t.push(vec![p.psi.into(), (p.rho * 1e6).into(), (p.eta * 1e6).into(), p.segment.label().into()]);
    }
    t
}

/// Force samples labelled with their injection phase.
pub fn trace_table(trace: &ForceTrace, markers: &PhaseMarkers) -> Table {
    let mut t = Table::new(&["time_s", "force_mN", "phase"]);
    for (&time, &f) in trace.time.iter().zip(&trace.force) {
        t.push(vec![time.into(), f.into(), markers.phase_at(time).label().into()]);
    }
    t
}

/// A file written by a command.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub kind: String,
    pub rows: Option<usize>,
}

/// Writes outputs into one directory and keeps the manifest.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    json: bool,
    manifest: Vec<ManifestEntry>,
}

impl OutputDir {
    pub fn create(root: &Path, json: bool) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| Error::Io(format!("{}: {e}", root.display())))?;
        Ok(OutputDir { root: root.to_path_buf(), json, manifest: Vec::new() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &[ManifestEntry] {
        &self.manifest
    }

    fn write(&mut self, name: &str, kind: &str, rows: Option<usize>, body: &str) -> Result<()> {
        let path = self.root.join(name);
        std::fs::write(&path, body).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        self.manifest.push(ManifestEntry { path: PathBuf::from(name), kind: kind.to_string(), rows });
        Ok(())
    }

    /// Writes `<stem>.csv` and, if enabled, `<stem>.json`.
    pub fn table(&mut self, stem: &str, table: &Table) -> Result<()> {
        self.write(&format!("{stem}.csv"), "csv", Some(table.rows.len()), &table.to_csv()?)?;
        if self.json {
            let body = serde_json::to_string_pretty(&table.to_json())? + "\n";
            self.write(&format!("{stem}.json"), "json", Some(table.rows.len()), &body)?;
        }
        Ok(())
    }

    pub fn text(&mut self, name: &str, kind: &str, body: &str) -> Result<()> {
        self.write(name, kind, None, body)
    }

    pub fn json_value<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let body = serde_json::to_string_pretty(value)? + "\n";
        self.write(name, "json", None, &body)
    }
}

/// Everything needed to reproduce and audit a run.
#[derive(Debug, Clone, Serialize)]
pub struct ResultEnvelope {
    pub command: String,
    /// Command arguments that are not part of the configuration.
    pub inputs: serde_json::Value,
    pub version: String,
    /// Resolved configuration, loadable as a config file.
    pub config: String,
    pub manifest: Vec<ManifestEntry>,
    pub convergence: serde_json::Value,
    pub summary: serde_json::Value,
}

impl ResultEnvelope {
    pub fn new(
        command: &str,
        inputs: serde_json::Value,
        config: &RunConfig,
        manifest: Vec<ManifestEntry>,
        convergence: serde_json::Value,
        summary: serde_json::Value,
    ) -> Self {
        ResultEnvelope {
            command: command.to_string(),
            inputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.to_toml(),
            manifest,
            convergence,
            summary,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_json_agree() {
        let mut t = Table::new(&["x_m", "ok", "label"]);
        t.push(vec![1.5.into(), true.into(), "a,b".into()]);
        t.push(vec![f64::NAN.into(), false.into(), "".into()]);
        assert_eq!(t.to_csv().unwrap(), "x_m,ok,label\n1.5,true,\"a,b\"\nNaN,false,\n");
        let j = t.to_json();
        assert_eq!(j[0]["x_m"], 1.5);
        assert!(j[1]["x_m"].is_null());
        assert_eq!(j[0]["label"], "a,b");
    }

    #[test]
    fn manifest_lists_every_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path(), true).unwrap();
        let mut t = Table::new(&["a_s"]);
        t.push(vec![1.0.into()]);
        out.table("t", &t).unwrap();
        out.text("config.toml", "config", "").unwrap();
        let names: Vec<_> = out.manifest().iter().map(|m| m.path.to_string_lossy().into_owned()).collect();
        assert_eq!(names, ["t.csv", "t.json", "config.toml"]);
        for n in names {
            assert!(dir.path().join(n).exists());
        }
    }

    #[test]
    fn floats_round_trip_through_csv() {
        let x = 0.1 + 0.2;
        let mut t = Table::new(&["v"]);
        t.push(vec![x.into()]);
        let csv = t.to_csv().unwrap();
        let back: f64 = csv.lines().nth(1).unwrap().parse().unwrap();
        assert_eq!(back, x);
    }
}
