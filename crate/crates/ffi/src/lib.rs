//! C ABI for the cellmech solver.
//!
//! Every function returns a [`CmStatus`]; results go through out-pointers.
//! On failure the message is kept per thread and can be read with
//! [`cm_last_error_message`]. Handles are opaque and must be released with
//! their `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cellmech::config::RunConfig;
use cellmech::equilibrium::{solve_equilibrium, EquilibriumSolution, ProblemSetup};
use cellmech::geometry::reconstruct_shape;
use cellmech::identify::{calibrate_c1, MeasuredPoint};
use cellmech::material::{elastic_coefficient, Preset, SpeedState};
use cellmech::response::{distribution_profile, force_at_deformation, force_deformation_curve};
use cellmech::trace::{detect_phases, lowpass_filter, ForceTrace};
use cellmech::{Category, Error};

/// Result code of every call. Error categories share their values with the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmStatus {
    Ok = 0,
    Config = 2,
    Domain = 3,
    Convergence = 4,
    Detection = 5,
    Io = 6,
    NullPointer = 10,
    InvalidUtf8 = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

impl From<Category> for CmStatus {
    fn from(c: Category) -> Self {
        match c {
            Category::Config => CmStatus::Config,
            Category::Domain => CmStatus::Domain,
            Category::Convergence => CmStatus::Convergence,
            Category::Detection => CmStatus::Detection,
            Category::Io => CmStatus::Io,
        }
    }
}

/// Material presets selectable from C.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmPreset {
    SimIv = 0,
    ExpVb = 1,
}

/// Opaque problem setup.
pub struct CmSetup(ProblemSetup);

/// Opaque converged solution.
pub struct CmSolution(EquilibriumSolution);

/// Scalar results of one solve, SI units.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CmSummary {
    pub psi_b: f64,
    pub force_n: f64,
    pub deformation_m: f64,
    pub pressure_pa: f64,
    pub lambda_a: f64,
    pub lambda_f: f64,
    pub c1_pa: f64,
    pub shooting_residual: f64,
    pub volume_residual: f64,
    pub iterations: u32,
}

/// One membrane sample with its tensions (N/m) and stresses (Pa).
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CmProfileSample {
    pub psi: f64,
    pub lambda_m: f64,
    pub lambda_c: f64,
    pub t_m: f64,
    pub t_c: f64,
    pub sigma_m: f64,
    pub sigma_c: f64,
    /// Segment index: 0 = AB, 1 = BC, 2 = CD, 3 = DE, 4 = EF.
    pub segment: u32,
}

/// Deformed meridian point, m.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CmShapePoint {
    pub psi: f64,
    pub rho: f64,
    pub eta: f64,
    pub segment: u32,
}

/// One sweep point; unconverged points carry NaN values.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CmCurvePoint {
    pub psi_b: f64,
    pub force_n: f64,
    pub deformation_m: f64,
    pub pressure_pa: f64,
    pub converged: bool,
}

/// Phase markers in s, forces in mN.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CmMarkers {
    pub t_contact: f64,
    pub t_puncture: f64,
    pub t_relax_end: f64,
    pub t_retract: f64,
    pub peak_force: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

/// Runs `f`, records any error or panic and converts it to a status.
fn guard(f: impl FnOnce() -> Result<(), CmFail>) -> CmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            CmStatus::Ok
        }
        Ok(Err(CmFail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            CmStatus::Panic
        }
    }
}

struct CmFail(CmStatus, String);

impl From<Error> for CmFail {
    fn from(e: Error) -> Self {
        CmFail(e.category().into(), e.to_string())
    }
}

fn null(what: &str) -> CmFail {
    CmFail(CmStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, CmFail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, CmFail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], CmFail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Copies `items` into a caller buffer, always reporting the needed length.
unsafe fn fill<T: Copy>(items: &[T], buf: *mut T, cap: usize, len: *mut usize) -> Result<(), CmFail> {
    *as_mut(len, "len")? = items.len();
    if buf.is_null() && cap == 0 {
        return Ok(());
    }
    if cap < items.len() {
        return Err(CmFail(
            CmStatus::BufferTooSmall,
            format!("buffer holds {cap} items, {} needed", items.len()),
        ));
    }
    if buf.is_null() {
        return Err(null("buf"));
    }
    ptr::copy_nonoverlapping(items.as_ptr(), buf, items.len());
    Ok(())
}

/// Length in bytes of the last error message on this thread, excluding the NUL.
#[no_mangle]
pub extern "C" fn cm_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().len())
}

/// Copies the last error message (NUL-terminated, truncated to `cap`) and
/// returns the number of bytes the full message needs including the NUL.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cm_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len() + 1
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Elastic coefficient `C1` (Pa) of a preset at velocity `v` (mm/s) and acceleration `a` (mm/s^2).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cm_elastic_coefficient(preset: CmPreset, v: f64, a: f64, out: *mut f64) -> CmStatus {
    guard(|| {
        let p = match preset {
            CmPreset::SimIv => Preset::SimIv,
            CmPreset::ExpVb => Preset::ExpVb,
        };
        let c1 = elastic_coefficient(SpeedState::new(v, a)?, &p.coefficients())?;
        *as_mut(out, "out")? = c1;
        Ok(())
    })
}

/// Default setup: 500 um cell, 3 um membrane, 40 um needle, simulation preset, 1 mm/s.
///
/// # Safety
/// `out` must be a valid pointer; the handle is released with [`cm_setup_free`].
#[no_mangle]
pub unsafe extern "C" fn cm_setup_new_default(out: *mut *mut CmSetup) -> CmStatus {
    guard(|| {
        let slot = as_mut(out, "out")?;
        *slot = Box::into_raw(Box::new(CmSetup(RunConfig::default().setup()?)));
        Ok(())
    })
}

/// Setup from a TOML configuration document (same format as the CLI).
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cm_setup_from_toml(toml: *const c_char, out: *mut *mut CmSetup) -> CmStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|e| CmFail(CmStatus::InvalidUtf8, e.to_string()))?;
        let setup = RunConfig::from_toml_str(text, &[])?.setup()?;
        *as_mut(out, "out")? = Box::into_raw(Box::new(CmSetup(setup)));
        Ok(())
    })
}

/// Changes the injection velocity (mm/s) and acceleration (mm/s^2).
///
/// # Safety
/// `setup` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cm_setup_set_speed(setup: *mut CmSetup, v: f64, a: f64) -> CmStatus {
    guard(|| {
        let s = as_mut(setup, "setup")?;
        let mut next = s.0;
        next.speed = SpeedState::new(v, a)?;
        next.validate()?;
        s.0 = next;
        Ok(())
    })
}

/// # Safety
/// `setup` must be null or a handle from this library, released once.
#[no_mangle]
pub unsafe extern "C" fn cm_setup_free(setup: *mut CmSetup) {
    if !setup.is_null() {
        drop(Box::from_raw(setup));
    }
}

/// Solves the equilibrium at contact angle `psi_b` (rad).
///
/// # Safety
/// `setup` must be a live handle and `out` a valid pointer; the solution is
/// released with [`cm_solution_free`].
#[no_mangle]
pub unsafe extern "C" fn cm_solve(setup: *const CmSetup, psi_b: f64, out: *mut *mut CmSolution) -> CmStatus {
    guard(|| {
        let s = as_ref(setup, "setup")?;
        let slot = as_mut(out, "out")?;
        let sol = solve_equilibrium(psi_b, &s.0, None)?;
        *slot = Box::into_raw(Box::new(CmSolution(sol)));
        Ok(())
    })
}

/// # Safety
/// `solution` must be null or a handle from this library, released once.
#[no_mangle]
pub unsafe extern "C" fn cm_solution_free(solution: *mut CmSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// # Safety
/// `solution` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cm_solution_summary(solution: *const CmSolution, out: *mut CmSummary) -> CmStatus {
    guard(|| {
        let s = &as_ref(solution, "solution")?.0;
        *as_mut(out, "out")? = CmSummary {
            psi_b: s.psi_b,
            force_n: s.force,
            deformation_m: s.deformation,
            pressure_pa: s.unknowns.p,
            lambda_a: s.unknowns.lambda_a,
            lambda_f: s.unknowns.lambda_f,
            c1_pa: s.material.c1,
            shooting_residual: s.residuals.shooting,
            volume_residual: s.residuals.volume,
            iterations: s.iterations as u32,
        };
        Ok(())
    })
}

fn segment_index(k: cellmech::geometry::SegmentKind) -> u32 {
    cellmech::geometry::SegmentKind::ALL.iter().position(|&s| s == k).unwrap_or(0) as u32
}

/// Tension profile. Call with `buf = NULL, cap = 0` to query the length.
///
/// # Safety
/// `solution` must be a live handle, `buf` null or `cap` writable items, `len` valid.
#[no_mangle]
pub unsafe extern "C" fn cm_solution_profile(
    solution: *const CmSolution,
    buf: *mut CmProfileSample,
    cap: usize,
    len: *mut usize,
) -> CmStatus {
    guard(|| {
        let s = &as_ref(solution, "solution")?.0;
        let items: Vec<CmProfileSample> = distribution_profile(s)?
            .samples
            .iter()
            .map(|p| CmProfileSample {
                psi: p.psi,
                lambda_m: p.lambda_m,
                lambda_c: p.lambda_c,
                t_m: p.t_m,
                t_c: p.t_c,
                sigma_m: p.sigma_m,
                sigma_c: p.sigma_c,
                segment: segment_index(p.segment),
            })
            .collect();
        fill(&items, buf, cap, len)
    })
}

/// Deformed meridian. Call with `buf = NULL, cap = 0` to query the length.
///
/// # Safety
/// As for [`cm_solution_profile`].
#[no_mangle]
pub unsafe extern "C" fn cm_solution_shape(
    solution: *const CmSolution,
    buf: *mut CmShapePoint,
    cap: usize,
    len: *mut usize,
) -> CmStatus {
    guard(|| {
        let s = &as_ref(solution, "solution")?.0;
        let items: Vec<CmShapePoint> = reconstruct_shape(&s.segments, s.r0)?
            .iter()
            .map(|p| CmShapePoint { psi: p.psi, rho: p.rho, eta: p.eta, segment: segment_index(p.segment) })
            .collect();
        fill(&items, buf, cap, len)
    })
}

/// Sweeps the strictly increasing `grid` (rad) and writes one point per angle into `out`.
///
/// # Safety
/// `grid` and `out` must each hold `n` items; `setup` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cm_curve(setup: *const CmSetup, grid: *const f64, n: usize, out: *mut CmCurvePoint) -> CmStatus {
    guard(|| {
        let s = as_ref(setup, "setup")?;
        let g = slice(grid, n, "grid")?;
        if out.is_null() && n > 0 {
            return Err(null("out"));
        }
        let curve = force_deformation_curve(g, &s.0)?;
        for (i, r) in curve.records.iter().enumerate() {
            *out.add(i) = CmCurvePoint {
                psi_b: r.psi_b,
                force_n: r.force,
                deformation_m: r.deformation,
                pressure_pa: r.pressure,
                converged: r.converged,
            };
        }
        Ok(())
    })
}

/// Force (N) and contact angle (rad) at deformation `d` (m).
///
/// # Safety
/// `setup` must be a live handle; `force` and `psi_b` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cm_force_at_deformation(setup: *const CmSetup, d: f64, force: *mut f64, psi_b: *mut f64) -> CmStatus {
    guard(|| {
        let s = as_ref(setup, "setup")?;
        let (f_out, p_out) = (as_mut(force, "force")?, as_mut(psi_b, "psi_b")?);
        let (f, p) = force_at_deformation(d, &s.0)?;
        *f_out = f;
        *p_out = p;
        Ok(())
    })
}

/// Elastic coefficient (Pa) that best fits `n` measured points (m, N), searched in `[lo, hi]` Pa.
///
/// # Safety
/// `deformation` and `force` must hold `n` items; `setup` live; `c1` valid.
#[no_mangle]
pub unsafe extern "C" fn cm_calibrate_c1(
    setup: *const CmSetup,
    deformation: *const f64,
    force: *const f64,
    n: usize,
    lo: f64,
    hi: f64,
    c1: *mut f64,
) -> CmStatus {
    guard(|| {
        let s = as_ref(setup, "setup")?;
        let d = slice(deformation, n, "deformation")?;
        let f = slice(force, n, "force")?;
        let out = as_mut(c1, "c1")?;
        let curve: Vec<MeasuredPoint> =
            d.iter().zip(f).map(|(&deformation, &force)| MeasuredPoint { deformation, force }).collect();
        *out = calibrate_c1(&curve, &s.0, (lo, hi))?.c1;
        Ok(())
    })
}

/// Detects injection phases in a force trace (s, mN). A positive `cutoff_hz`
/// applies the zero-phase low-pass first.
///
/// # Safety
/// `time` and `force` must hold `n` items; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cm_detect_phases(
    time: *const f64,
    force: *const f64,
    n: usize,
    cutoff_hz: f64,
    noise_window_s: f64,
    out: *mut CmMarkers,
) -> CmStatus {
    guard(|| {
        let t = slice(time, n, "time")?;
        let f = slice(force, n, "force")?;
        let slot = as_mut(out, "out")?;
        let mut tr = ForceTrace::from_force(t.to_vec(), f.to_vec())?;
        if cutoff_hz > 0.0 {
            tr = lowpass_filter(&tr, cutoff_hz)?;
        }
        let m = detect_phases(&tr, noise_window_s)?;
        *slot = CmMarkers {
            t_contact: m.t_contact,
            t_puncture: m.t_puncture,
            t_relax_end: m.t_relax_end,
            t_retract: m.t_retract,
            peak_force: m.peak_force,
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_out_pointer_is_reported() {
        let st = unsafe { cm_elastic_coefficient(CmPreset::SimIv, 1.0, 0.0, ptr::null_mut()) };
        assert_eq!(st, CmStatus::NullPointer);
        assert!(cm_last_error_length() > 0);
    }

    #[test]
    fn panics_are_caught() {
        let st = guard(|| panic!("boom"));
        assert_eq!(st, CmStatus::Panic);
        let mut buf = [0 as c_char; 64];
        let need = unsafe { cm_last_error_message(buf.as_mut_ptr(), buf.len()) };
        let msg = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
        assert_eq!(msg, "internal panic: boom");
        assert_eq!(need, msg.len() + 1);
    }

    #[test]
    fn message_truncates() {
        set_error("abcdef".into());
        let mut buf = [1 as c_char; 4];
        let need = unsafe { cm_last_error_message(buf.as_mut_ptr(), 4) };
        assert_eq!(need, 7);
        assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_bytes(), b"abc");
    }

    #[test]
    fn fill_checks_capacity() {
        let mut len = 0usize;
        let mut buf = [0.0f64; 2];
        assert!(matches!(unsafe { fill(&[1.0, 2.0, 3.0], buf.as_mut_ptr(), 2, &mut len) }, Err(CmFail(CmStatus::BufferTooSmall, _))));
        assert_eq!(len, 3);
        assert!(unsafe { fill(&[1.0, 2.0], buf.as_mut_ptr(), 2, &mut len) }.is_ok());
        assert_eq!(buf, [1.0, 2.0]);
    }
}
