mod common;

use std::path::Path;
use std::process::{Command, Output};

use cellmech::material::{elastic_coefficient, Preset, SpeedState};

fn cellmech(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cellmech"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn cellmech")
}

fn envelope(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("envelope.json")).unwrap()).unwrap()
}

#[test]
fn solve_writes_manifest_and_echoes_config() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cellmech(tmp.path(), &["solve", "--psi-b", "0.45", "--profile", "--shape", "-o", "run", "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let run = tmp.path().join("run");
    let env = envelope(&run);
    assert_eq!(env["command"], "solve");
    for entry in env["manifest"].as_array().unwrap() {
        assert!(run.join(entry["path"].as_str().unwrap()).exists(), "{entry}");
    }
    let names: Vec<_> = env["manifest"].as_array().unwrap().iter().map(|e| e["path"].as_str().unwrap()).collect();
    for f in ["config.toml", "profile.csv", "profile.json", "shape.csv", "solution.json"] {
        assert!(names.contains(&f), "{names:?}");
    }
    let header = std::fs::read_to_string(run.join("profile.csv")).unwrap();
    assert!(header.starts_with("psi_rad,segment,lambda_m,lambda_c,Tm_N_per_m"));
    // stdout is the full envelope in JSON mode.
    let printed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(printed["summary"], env["summary"]);
}

#[test]
fn rerun_from_echoed_config_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let first = cellmech(tmp.path(), &["solve", "--psi-b", "0.5", "--v", "0.6", "--shape", "-o", "a"]);
    assert!(first.status.success());
    let second = cellmech(tmp.path(), &["solve", "--psi-b", "0.5", "-c", "a/config.toml", "--shape", "-o", "b"]);
    assert!(second.status.success(), "{}", String::from_utf8_lossy(&second.stderr));
    for f in ["config.toml", "shape.csv", "solution.json"] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "[cell]\nfoo = 1\n").unwrap();
    let o = cellmech(tmp.path(), &["solve", "-c", "bad.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cell.foo"));

    let o = cellmech(tmp.path(), &["solve", "--set", "sweep.psi_b_end=2.0"]);
    assert_eq!(o.status.code(), Some(2));

    let o = cellmech(tmp.path(), &["solve", "--psi-b", "0.1", "--json"]);
    assert_eq!(o.status.code(), Some(3));
    let err: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(err["error"].is_object() || err["error"].is_string(), "{err}");

    let o = cellmech(tmp.path(), &["ingest", "missing.csv"]);
    assert_eq!(o.status.code(), Some(6));

    let o = cellmech(tmp.path(), &["solve", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ingest_detects_phases_and_deformation() {
    let tmp = tempfile::tempdir().unwrap();
    let mut body = String::from("time_s,voltage_mV\n");
    for i in 0..3000 {
        let t = i as f64 / 1000.0;
        let f = if (1.0..=1.5).contains(&t) { 0.5 * (t - 1.0) / 0.5 } else { 0.0 };
        // Deterministic ripple stands in for sensor noise.
        let ripple = 1e-3 * ((i * 7919 % 13) as f64 / 6.0 - 1.0);
        body += &format!("{t},{}\n", (f + ripple) / 0.0102);
    }
    std::fs::write(tmp.path().join("trace.csv"), body).unwrap();
    let o = cellmech(tmp.path(), &["ingest", "trace.csv", "--v", "2.0", "-o", "ing"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let markers: toml::Table = std::fs::read_to_string(tmp.path().join("ing/markers.toml")).unwrap().parse().unwrap();
    let get = |k: &str| markers[k].as_float().unwrap();
    assert!((get("t_contact_s") - 1.0).abs() <= 2e-3);
    assert!((get("t_puncture_s") - 1.5).abs() <= 2e-3);
    assert!((get("deformation_um") - 1000.0).abs() <= 10.0);
    let trace = std::fs::read_to_string(tmp.path().join("ing/trace.csv")).unwrap();
    assert!(trace.starts_with("time_s,force_mN,phase\n"));
    assert_eq!(trace.lines().count(), 3001);
}

#[test]
fn identify_recovers_velocity_law() {
    let tmp = tempfile::tempdir().unwrap();
    let truth = Preset::SimIv.coefficients();
    let mut table = String::from("id,kind,v_mm_s,a_mm_s2,curve\n");
    for (i, v) in [0.2, 1.0, 2.0].into_iter().enumerate() {
        let c1 = elastic_coefficient(SpeedState { v, a: 0.0 }, &truth).unwrap();
        let pts = common::synthetic_curve(&common::fixed(c1), &[0.4, 0.5, 0.6]);
        let mut curve = String::from("d_um,F_uN\n");
        for p in pts {
            curve += &format!("{},{}\n", p.deformation * 1e6, p.force * 1e6);
        }
        std::fs::write(tmp.path().join(format!("c{i}.csv")), curve).unwrap();
        table += &format!("e{i},const_v,{v},0,c{i}.csv\n");
    }
    std::fs::write(tmp.path().join("experiments.csv"), table).unwrap();
    let o = cellmech(tmp.path(), &["identify", "experiments.csv", "-o", "id"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let coeffs: toml::Table = std::fs::read_to_string(tmp.path().join("id/coefficients.toml")).unwrap().parse().unwrap();
    let base = truth.acceleration_factor(0.0);
    let k = coeffs["k_MPa"].as_array().unwrap();
    for (got, want) in k.iter().zip(truth.k_mpa()) {
        let got = got.as_float().unwrap();
        assert!((got / (want * base) - 1.0).abs() < 0.01, "{got} vs {}", want * base);
    }
    let cal = std::fs::read_to_string(tmp.path().join("id/calibrations.csv")).unwrap();
    assert_eq!(cal.lines().count(), 4);
}
