//! Force-sensor trace processing: conversion, zero-phase filtering, phase
//! detection and deformation from the commanded feed.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

/// PVDF sensor sensitivity in mN per mV.
pub const PVDF_SENSITIVITY: f64 = 0.0102;
/// Default low-pass cutoff in Hz.
pub const DEFAULT_CUTOFF: f64 = 20.0;
/// Default leading baseline window in s.
pub const DEFAULT_NOISE_WINDOW: f64 = 0.5;
/// Contact threshold in baseline standard deviations.
const THRESHOLD_SIGMAS: f64 = 5.0;

/// Relative tolerance on sample spacing.
const SPACING_TOL: f64 = 1e-6;

fn sample_rate_of(time: &[f64]) -> Result<f64> {
    if time.len() < 2 {
        return Err(Error::Argument("a trace needs at least two samples".into()));
    }
    let dt = (time[time.len() - 1] - time[0]) / (time.len() - 1) as f64;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Argument("trace times must increase".into()));
    }
    if let Some(w) = time.windows(2).find(|w| ((w[1] - w[0]) - dt).abs() > SPACING_TOL * dt.max(1.0) + 1e-6 * dt) {
        return Err(Error::Argument(format!(
            "trace is not uniformly sampled near t = {} s (spacing {} s, expected {dt} s)",
            w[0],
            w[1] - w[0]
        )));
    }
    Ok(1.0 / dt)
}

/// Sensor voltage samples: time in s, voltage in mV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTrace {
    pub sample_rate: f64,
    pub time: Vec<f64>,
    pub voltage: Vec<f64>,
}

impl RawTrace {
    pub fn new(time: Vec<f64>, voltage: Vec<f64>) -> Result<Self> {
        if time.len() != voltage.len() {
            return Err(Error::Argument("time and voltage columns differ in length".into()));
        }
        if voltage.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("voltage samples must be finite".into()));
        }
        let sample_rate = sample_rate_of(&time)?;
        Ok(RawTrace { sample_rate, time, voltage })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Forward and backward pass: no phase lag, squared magnitude response.
    ZeroPhase,
    /// Single causal pass, with the phase lag of a plain analog-style filter.
    SinglePass,
}

/// Record of the filter applied to a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterInfo {
    pub kind: FilterKind,
    pub order: usize,
    pub cutoff_hz: f64,
    pub mode: FilterMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Butterworth,
}

/// Force samples in mN with their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceTrace {
    pub sample_rate: f64,
    pub time: Vec<f64>,
    pub force: Vec<f64>,
    /// Sensitivity used for the conversion, mN/mV.
    pub sensitivity: f64,
    pub filter: Option<FilterInfo>,
}

impl ForceTrace {
    /// Builds a trace directly from force samples in mN.
    pub fn from_force(time: Vec<f64>, force: Vec<f64>) -> Result<Self> {
        if time.len() != force.len() {
            return Err(Error::Argument("time and force columns differ in length".into()));
        }
        let sample_rate = sample_rate_of(&time)?;
        Ok(ForceTrace { sample_rate, time, force, sensitivity: 1.0, filter: None })
    }
}

/// Converts sensor voltage to force by linear scaling.
pub fn voltage_to_force(raw: &RawTrace, sensitivity: f64) -> Result<ForceTrace> {
    if !(sensitivity > 0.0 && sensitivity.is_finite()) {
        return Err(Error::Argument(format!("sensitivity must be positive, got {sensitivity}")));
    }
    Ok(ForceTrace {
        sample_rate: raw.sample_rate,
        time: raw.time.clone(),
        force: raw.voltage.iter().map(|v| v * sensitivity).collect(),
        sensitivity,
        filter: None,
    })
}

/// Second-order Butterworth low-pass section `(b, a)` with `a[0] = 1`.
fn butterworth2(cutoff: f64, fs: f64) -> ([f64; 3], [f64; 3]) {
    let k = (PI * cutoff / fs).tan();
    let norm = 1.0 / (1.0 + SQRT_2 * k + k * k);
    let b0 = k * k * norm;
    let a1 = 2.0 * (k * k - 1.0) * norm;
    let a2 = (1.0 - SQRT_2 * k + k * k) * norm;
    ([b0, 2.0 * b0, b0], [1.0, a1, a2])
}

/// Transposed direct-form II pass starting from the steady state for input `x[0]`.
fn biquad(b: &[f64; 3], a: &[f64; 3], x: &[f64]) -> Vec<f64> {
    let Some(&x0) = x.first() else { return Vec::new() };
    let mut z2 = (b[2] - a[2]) * x0;
    let mut z1 = (b[1] - a[1]) * x0 + z2;
    x.iter()
        .map(|&xi| {
            let y = b[0] * xi + z1;
            z1 = b[1] * xi - a[1] * y + z2;
            z2 = b[2] * xi - a[2] * y;
            y
        })
        .collect()
}

/// Zero-phase low-pass with the default forward-backward mode.
pub fn lowpass_filter(trace: &ForceTrace, cutoff: f64) -> Result<ForceTrace> {
    lowpass_filter_with(trace, cutoff, FilterMode::ZeroPhase)
}

pub fn lowpass_filter_with(trace: &ForceTrace, cutoff: f64, mode: FilterMode) -> Result<ForceTrace> {
    let fs = trace.sample_rate;
    if !(cutoff > 0.0 && cutoff < 0.5 * fs) {
        return Err(Error::Argument(format!(
            "cutoff {cutoff} Hz must lie in (0, {}) Hz for a {fs} Hz trace",
            0.5 * fs
        )));
    }
    let (b, a) = butterworth2(cutoff, fs);
    let x = &trace.force;
    let force = match mode {
        FilterMode::SinglePass => biquad(&b, &a, x),
        FilterMode::ZeroPhase => {
            let n = x.len();
            // Odd extension at both ends suppresses start-up transients.
            let pad = (3 * 3).min(n.saturating_sub(1));
            let mut ext = Vec::with_capacity(n + 2 * pad);
            ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
            ext.extend_from_slice(x);
            ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
            let mut y = biquad(&b, &a, &ext);
            y.reverse();
            let mut y = biquad(&b, &a, &y);
            y.reverse();
            y[pad..pad + n].to_vec()
        }
    };
    Ok(ForceTrace {
        sample_rate: fs,
        time: trace.time.clone(),
        force,
        sensitivity: trace.sensitivity,
        filter: Some(FilterInfo { kind: FilterKind::Butterworth, order: 2, cutoff_hz: cutoff, mode }),
    })
}

/// Times of the injection phases and the peak force (mN).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseMarkers {
    /// Needle touches the cell.
    pub t_contact: f64,
    /// Membrane breaks at the force peak.
    pub t_puncture: f64,
    /// Post-puncture force has relaxed to the baseline.
    pub t_relax_end: f64,
    /// Retraction starts pulling the sensor below the baseline.
    pub t_retract: f64,
    pub peak_force: f64,
    /// Baseline mean and standard deviation, mN.
    pub baseline: f64,
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Approach,
    Pierce,
    Breakage,
    Retract,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Approach => "approach",
            Phase::Pierce => "pierce",
            Phase::Breakage => "breakage",
            Phase::Retract => "retract",
        }
    }
}

impl PhaseMarkers {
    pub fn phase_at(&self, t: f64) -> Phase {
        if t < self.t_contact {
            Phase::Approach
        } else if t <= self.t_puncture {
            Phase::Pierce
        } else if t < self.t_retract {
            Phase::Breakage
        } else {
            Phase::Retract
        }
    }
}

/// Least-squares line through `(t, f)`; returns `(intercept, slope)`.
fn line_fit(t: &[f64], f: &[f64]) -> Option<(f64, f64)> {
    let n = t.len() as f64;
    if t.len() < 2 {
        return None;
    }
    let (mt, mf) = (t.iter().sum::<f64>() / n, f.iter().sum::<f64>() / n);
    let (mut stt, mut stf) = (0.0, 0.0);
    for (ti, fi) in t.iter().zip(f) {
        stt += (ti - mt) * (ti - mt);
        stf += (ti - mt) * (fi - mf);
    }
    (stt > 0.0).then(|| {
        let slope = stf / stt;
        (mf - slope * mt, slope)
    })
}

/// Locates contact, puncture, relaxation end and retraction in a force trace.
///
/// Contact is where the force first exceeds the baseline by five standard
/// deviations, refined to where a line fitted to the lower half of the rise meets
/// the baseline. Puncture is the global maximum after contact; when it is
/// followed by a sudden drop it is moved to the steepest point of that drop, which
/// a zero-phase filter leaves in place while it rounds off the peak itself.
pub fn detect_phases(trace: &ForceTrace, noise_window: f64) -> Result<PhaseMarkers> {
    let (t, f) = (&trace.time, &trace.force);
    if !(noise_window > 0.0) {
        return Err(Error::Argument(format!("noise window must be positive, got {noise_window}")));
    }
    let nb = t.partition_point(|&x| x < t[0] + noise_window);
    if nb < 2 || nb >= t.len() {
        return Err(Error::Detection(format!(
            "baseline window of {noise_window} s holds {nb} of {} samples",
            t.len()
        )));
    }
    let base = &f[..nb];
    let mu = base.iter().sum::<f64>() / nb as f64;
    let sigma = (base.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (nb - 1) as f64).sqrt();
    let thr = mu + THRESHOLD_SIGMAS * sigma;

    let ic = (nb..f.len())
        .find(|&i| f[i] > thr)
        .ok_or_else(|| Error::Detection("force never rises above the baseline noise".into()))?;
    let ip = (ic..f.len())
        .max_by(|&a, &b| f[a].total_cmp(&f[b]).then(b.cmp(&a)))
        .expect("non-empty range");
    let amp = f[ip] - mu;
    // A real event must stand far above the threshold excursion.
    if ip == ic || amp <= 2.0 * THRESHOLD_SIGMAS * sigma {
        return Err(Error::Detection("no dominant force peak after contact".into()));
    }

    // Samples over which filtering smears a corner of the signal.
    let smear = match trace.filter {
        Some(fi) => (trace.sample_rate / (2.0 * PI * fi.cutoff_hz) * 3.0).ceil() as usize,
        None => 0,
    } + 3;

    // Contact: extrapolate the lower half of the rise, past the smeared corner,
    // back to the baseline.
    let half = (ic..=ip).find(|&i| f[i] - mu >= 0.5 * amp).unwrap_or(ip);
    let from = (ic + smear).min(half);
    let t_contact = match line_fit(&t[from..=half], &f[from..=half]) {
        Some((c, s)) if s > 0.0 && half - from >= 3 => ((mu - c) / s).clamp(t[nb - 1], t[from]),
        _ => t[ic],
    };

    // Puncture: steepest descent right after the peak, if the force collapses there.
    let lo = ip.saturating_sub(smear);
    let hi = (ip + 2 * smear).min(f.len() - 1);
    let kd = (lo..hi).min_by(|&a, &b| (f[a + 1] - f[a]).total_cmp(&(f[b + 1] - f[b])));
    let ipunct = match kd {
        Some(k) if k >= ip.saturating_sub(smear) && f[hi] - mu < 0.5 * amp && f[k + 1] < f[k] => k.max(ic + 1),
        _ => ip,
    };
    let t_puncture = t[ipunct];

    let irelax = (ipunct..f.len()).find(|&i| f[i] <= thr).unwrap_or(f.len() - 1);
    let iretract = (irelax..f.len())
        .find(|&i| f[i] < mu - THRESHOLD_SIGMAS * sigma)
        .unwrap_or(irelax);
    Ok(PhaseMarkers {
        t_contact,
        t_puncture,
        t_relax_end: t[irelax],
        t_retract: t[iretract],
        peak_force: f[ip],
        baseline: mu,
        noise: sigma,
    })
}

/// Commanded (or logged) needle motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FeedProfile {
    /// Constant velocity in mm/s.
    Constant { v: f64 },
    /// Uniform acceleration from `v0` (mm/s) at `a` (mm/s^2), starting at contact.
    Accelerated { v0: f64, a: f64 },
    /// Encoder log: time in s and position in mm; overrides the commanded profile.
    Logged { time: Vec<f64>, position: Vec<f64> },
}

fn interp(x: &[f64], y: &[f64], at: f64) -> Result<f64> {
    if x.len() < 2 || x.len() != y.len() {
        return Err(Error::Argument("encoder log needs matching time and position columns".into()));
    }
    if at < x[0] || at > x[x.len() - 1] {
        return Err(Error::Argument(format!("encoder log does not cover t = {at} s")));
    }
    let i = x.partition_point(|&v| v <= at).clamp(1, x.len() - 1);
    let w = (at - x[i - 1]) / (x[i] - x[i - 1]);
    Ok(y[i - 1] + w * (y[i] - y[i - 1]))
}

/// Deformation (m) over `[t_contact, t_puncture]` and the velocity at puncture (mm/s).
pub fn deformation_from_feed(markers: &PhaseMarkers, motion: &FeedProfile) -> Result<(f64, f64)> {
    let dt = markers.t_puncture - markers.t_contact;
    if !(dt >= 0.0) {
        return Err(Error::Argument(format!("puncture precedes contact by {} s", -dt)));
    }
    let (d_mm, v) = match motion {
        FeedProfile::Constant { v } => (v * dt, *v),
        FeedProfile::Accelerated { v0, a } => (v0 * dt + 0.5 * a * dt * dt, v0 + a * dt),
        FeedProfile::Logged { time, position } => {
            let d = interp(time, position, markers.t_puncture)? - interp(time, position, markers.t_contact)?;
            let h = (time[time.len() - 1] - time[0]) / (time.len() - 1) as f64;
            let (ta, tb) = ((markers.t_puncture - h).max(time[0]), (markers.t_puncture + h).min(time[time.len() - 1]));
            let v = (interp(time, position, tb)? - interp(time, position, ta)?) / (tb - ta);
            (d, v)
        }
    };
    Ok((d_mm * 1e-3, v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn times(n: usize, fs: f64) -> Vec<f64> {
        (0..n).map(|i| i as f64 / fs).collect()
    }

    fn sine(freq: f64, fs: f64, n: usize) -> ForceTrace {
        let t = times(n, fs);
        let f = t.iter().map(|x| (2.0 * PI * freq * x).sin()).collect();
        ForceTrace::from_force(t, f).unwrap()
    }

    fn mid_amplitude(tr: &ForceTrace) -> f64 {
        let n = tr.force.len();
        tr.force[n / 4..3 * n / 4].iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn conversion_uses_the_sensitivity() {
        let raw = RawTrace::new(vec![0.0, 0.001], vec![10.0, 0.0]).unwrap();
        let f = voltage_to_force(&raw, PVDF_SENSITIVITY).unwrap();
        assert!((f.force[0] - 0.102).abs() < 1e-15);
        assert_eq!(f.force[1], 0.0);
        assert!(voltage_to_force(&raw, 0.0).is_err());
    }

    #[test]
    fn nonuniform_sampling_is_rejected() {
        assert!(RawTrace::new(vec![0.0, 0.001, 0.0025], vec![0.0; 3]).is_err());
        assert!(RawTrace::new(vec![0.0, 0.001], vec![0.0]).is_err());
    }

    #[test]
    fn butterworth_has_unit_dc_gain() {
        let (b, a) = butterworth2(20.0, 1000.0);
        assert!(((b.iter().sum::<f64>()) / (a.iter().sum::<f64>()) - 1.0).abs() < 1e-11);
    }

    #[test]
    fn constant_trace_passes_unchanged() {
        let t = times(2000, 1000.0);
        let tr = ForceTrace::from_force(t, vec![3.7; 2000]).unwrap();
        for mode in [FilterMode::ZeroPhase, FilterMode::SinglePass] {
            let y = lowpass_filter_with(&tr, 20.0, mode).unwrap();
            assert!(y.force.iter().all(|v| (v - 3.7).abs() < 1e-9));
        }
    }

    #[test]
    fn passband_and_stopband() {
        let low = lowpass_filter(&sine(1.0, 1000.0, 6000), 20.0).unwrap();
        assert!((mid_amplitude(&low) - 1.0).abs() < 0.01);
        let high = lowpass_filter(&sine(200.0, 1000.0, 6000), 20.0).unwrap();
        assert!(mid_amplitude(&high) < 0.05);
    }

    #[test]
    fn zero_phase_has_no_lag_but_single_pass_does() {
        let tr = sine(5.0, 1000.0, 4000);
        let zp = lowpass_filter(&tr, 20.0).unwrap();
        let sp = lowpass_filter_with(&tr, 20.0, FilterMode::SinglePass).unwrap();
        let err = |y: &ForceTrace| {
            y.force[1000..3000]
                .iter()
                .zip(&tr.force[1000..3000])
                .fold(0.0_f64, |a, (p, q)| a.max((p - q).abs()))
        };
        assert!(err(&zp) < 0.01);
        assert!(err(&sp) > 0.1);
        assert_eq!(zp.filter.unwrap().mode, FilterMode::ZeroPhase);
    }

    #[test]
    fn bad_cutoff() {
        let tr = sine(1.0, 100.0, 200);
        assert!(lowpass_filter(&tr, 50.0).is_err());
        assert!(lowpass_filter(&tr, 0.0).is_err());
    }

    #[test]
    fn phases_on_a_clean_ramp() {
        let t = times(3000, 1000.0);
        let f: Vec<f64> = t
            .iter()
            .map(|&x| if (1.0..=1.5).contains(&x) { 1.0 * (x - 1.0) } else if x > 2.0 { -0.05 } else { 0.0 })
            .collect();
        // A tiny deterministic ripple gives the baseline a nonzero spread.
        let f: Vec<f64> = f.iter().enumerate().map(|(i, v)| v + 1e-4 * ((i % 7) as f64 - 3.0)).collect();
        let m = detect_phases(&ForceTrace::from_force(t, f).unwrap(), 0.5).unwrap();
        assert!((m.t_contact - 1.0).abs() <= 0.002, "{m:?}");
        assert!((m.t_puncture - 1.5).abs() <= 0.002, "{m:?}");
        assert!(m.t_relax_end >= m.t_puncture && m.t_retract >= m.t_relax_end);
        assert!((m.t_retract - 2.0).abs() <= 0.002, "{m:?}");
        assert_eq!(m.phase_at(0.5), Phase::Approach);
        assert_eq!(m.phase_at(1.2), Phase::Pierce);
        assert_eq!(m.phase_at(1.7), Phase::Breakage);
        assert_eq!(m.phase_at(2.5), Phase::Retract);
    }

    #[test]
    fn flat_trace_has_no_event() {
        let t = times(2000, 1000.0);
        let f = (0..2000).map(|i| 1e-3 * ((i * 37 % 11) as f64 - 5.0)).collect();
        assert!(matches!(detect_phases(&ForceTrace::from_force(t, f).unwrap(), 0.5), Err(Error::Detection(_))));
    }

    #[test]
    fn feed_kinematics() {
        let m = PhaseMarkers {
            t_contact: 1.0,
            t_puncture: 1.1,
            t_relax_end: 1.2,
            t_retract: 1.3,
            peak_force: 1.0,
            baseline: 0.0,
            noise: 0.0,
        };
        let (d, v) = deformation_from_feed(&m, &FeedProfile::Constant { v: 2.0 }).unwrap();
        assert!((d - 200e-6).abs() < 1e-15 && v == 2.0);
        let m2 = PhaseMarkers { t_puncture: 1.2, ..m };
        let (d, v) = deformation_from_feed(&m2, &FeedProfile::Accelerated { v0: 0.0, a: 10.0 }).unwrap();
        assert!((d - 200e-6).abs() < 1e-12 && (v - 2.0).abs() < 1e-12);
        let m3 = PhaseMarkers { t_puncture: 1.0, ..m };
        assert_eq!(deformation_from_feed(&m3, &FeedProfile::Constant { v: 2.0 }).unwrap().0, 0.0);
        let bad = PhaseMarkers { t_puncture: 0.9, ..m };
        assert!(deformation_from_feed(&bad, &FeedProfile::Constant { v: 2.0 }).is_err());
        let log = FeedProfile::Logged { time: vec![0.0, 1.0, 2.0], position: vec![0.0, 2.0, 4.0] };
        let (d, v) = deformation_from_feed(&m, &log).unwrap();
        assert!((d - 200e-6).abs() < 1e-12 && (v - 2.0).abs() < 1e-12);
    }
}
