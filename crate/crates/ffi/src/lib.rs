//! C ABI over the core library.
//!
//! Objects cross the boundary as opaque handles created by `bl_*_new` /
//! `bl_*_from_*` and released with the matching `bl_*_free`. Every fallible
//! call returns a [`BlStatus`]; on failure the message is kept per thread and
//! can be copied out with [`bl_last_error`]. Panics never unwind into C: they
//! are caught and reported as [`BlStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use burgers_lab::harness::{BoundReport, CheckId, Experiment, ExperimentConfig};
use burgers_lab::oracle::{cole_hopf_1d, OracleQuery};
use burgers_lab::scalar_flows::{fixed_point_bound, phi_flow, FlowParams};
use burgers_lab::velocity::{make_prototype, DirectionMap, VelocityFieldSpec};
use burgers_lab::zones::{safe_interval, ZoneLayout};
use burgers_lab::LabError;

/// Result codes. `Ok` is zero; everything else is an error.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidParameter = 3,
    Config = 4,
    Validation = 5,
    Precondition = 6,
    Numerical = 7,
    Index = 8,
    Io = 9,
    UnknownCheck = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

impl From<&LabError> for BlStatus {
    fn from(e: &LabError) -> Self {
        match e {
            LabError::Parameter { .. } | LabError::AmplitudeCap { .. } => BlStatus::InvalidParameter,
            LabError::Config(_) => BlStatus::Config,
            LabError::Validation(_) | LabError::DegenerateLayout(_) => BlStatus::Validation,
            LabError::Precondition(_) | LabError::Sequencing(_) => BlStatus::Precondition,
            LabError::Domain(_)
            | LabError::Range { .. }
            | LabError::Divergence { .. }
            | LabError::ExponentialBlowup { .. }
            | LabError::Oracle { .. } => BlStatus::Numerical,
            LabError::Index { .. } => BlStatus::Index,
            LabError::Io(_) => BlStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn fail(status: BlStatus, msg: impl Into<String>) -> BlStatus {
    set_error(msg.into());
    status
}

fn lab(e: LabError) -> BlStatus {
    let status = BlStatus::from(&e);
    fail(status, e.to_string())
}

/// Runs `f`, converting panics into [`BlStatus::Panic`].
fn guard(f: impl FnOnce() -> BlStatus) -> BlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == BlStatus::Ok {
                set_error(String::new());
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(BlStatus::Panic, format!("panic: {msg}"))
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, BlStatus> {
    if p.is_null() {
        return Err(fail(BlStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(BlStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], BlStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(BlStatus::NullPointer, format!("`{name}` is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

macro_rules! out {
    ($p:expr) => {
        if $p.is_null() {
            return fail(BlStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        }
    };
}

/// Copies `text` NUL-terminated into `buf` (capacity `cap` bytes) and stores
/// the required capacity in `needed` (if non-null). Passing `buf = NULL`
/// queries the size.
unsafe fn copy_text(text: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> BlStatus {
    let need = text.len() + 1;
    if !needed.is_null() {
        *needed = need;
    }
    if buf.is_null() {
        return BlStatus::Ok;
    }
    if cap < need {
        return fail(BlStatus::BufferTooSmall, format!("buffer holds {cap} bytes, {need} needed"));
    }
    ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
    *buf.add(text.len()) = 0;
    BlStatus::Ok
}

/// Copies the calling thread's last error message (empty after a success).
///
/// # Safety
/// `buf` must be null or valid for `cap` bytes; `needed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn bl_last_error(buf: *mut c_char, cap: usize, needed: *mut usize) -> BlStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    copy_text(&msg, buf, cap, needed)
}

// ---------------------------------------------------------------- scalars

/// `Φ(t, x)` of the scalar comparison flow.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bl_phi_flow(kappa: f64, u: f64, x_min: f64, t: f64, x: f64, out: *mut f64) -> BlStatus {
    guard(|| {
        out!(out);
        match FlowParams::new(kappa, u, x_min).and_then(|p| phi_flow(&p, t, x)) {
            Ok(v) => {
                *out = v;
                BlStatus::Ok
            }
            Err(e) => lab(e),
        }
    })
}

/// Bound on every iterate of `B_{n+1} = c1 + c2 B_n^α`, `B_0 = a0`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bl_fixed_point_bound(c1: f64, c2: f64, alpha: f64, a0: f64, out: *mut f64) -> BlStatus {
    guard(|| {
        out!(out);
        match fixed_point_bound(c1, c2, alpha, a0) {
            Ok(v) => {
                *out = v;
                BlStatus::Ok
            }
            Err(e) => lab(e),
        }
    })
}

// ----------------------------------------------------------------- layout

/// Opaque zone layout.
pub struct BlLayout(ZoneLayout);

/// # Safety
/// `radii` must be valid for `n` reads; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bl_layout_new(radii: *const f64, n: usize, kappa: f64, out: *mut *mut BlLayout) -> BlStatus {
    guard(|| {
        out!(out);
        let r = match slice_arg(radii, n, "radii") {
            Ok(r) => r.to_vec(),
            Err(s) => return s,
        };
        if kappa.is_nan() || kappa <= 1.0 {
            return fail(BlStatus::InvalidParameter, format!("kappa = {kappa} must be > 1"));
        }
        *out = Box::into_raw(Box::new(BlLayout(ZoneLayout::new(r, kappa))));
        BlStatus::Ok
    })
}

/// Checks the layout rules. On a violation returns `Validation` and, when
/// the pointers are non-null, stores the offending radii pair.
///
/// # Safety
/// `layout` must come from [`bl_layout_new`]; out pointers null or writable.
#[no_mangle]
pub unsafe extern "C" fn bl_layout_validate(layout: *const BlLayout, r_lo: *mut f64, r_hi: *mut f64) -> BlStatus {
    guard(|| {
        out!(layout);
        let report = match (*layout).0.validate() {
            Ok(r) => r,
            Err(e) => return lab(e),
        };
        match report.first_violation {
            None => BlStatus::Ok,
            Some(v) => {
                if !r_lo.is_null() {
                    *r_lo = v.radii.0;
                }
                if !r_hi.is_null() {
                    *r_hi = v.radii.1;
                }
                fail(
                    BlStatus::Validation,
                    format!("{:?} rule violated at index {}: radii ({}, {})", v.rule, v.index, v.radii.0, v.radii.1),
                )
            }
        }
    })
}

/// Safe interval `I_i(t)` of safe zone `i` (1-based).
///
/// # Safety
/// `layout` must come from [`bl_layout_new`]; out pointers writable.
#[no_mangle]
pub unsafe extern "C" fn bl_layout_safe_interval(
    layout: *const BlLayout,
    i: usize,
    t: f64,
    u: f64,
    c: f64,
    viscous: bool,
    lower: *mut f64,
    upper: *mut f64,
    empty: *mut bool,
) -> BlStatus {
    guard(|| {
        out!(layout);
        out!(lower);
        out!(upper);
        out!(empty);
        match safe_interval(&(*layout).0, i, t, u, c, viscous) {
            Ok(iv) => {
                *lower = iv.lower;
                *upper = iv.upper;
                *empty = iv.empty;
                BlStatus::Ok
            }
            Err(e) => lab(e),
        }
    })
}

/// # Safety
/// `layout` must be null or come from [`bl_layout_new`], and not be used again.
#[no_mangle]
pub unsafe extern "C" fn bl_layout_free(layout: *mut BlLayout) {
    if !layout.is_null() {
        drop(Box::from_raw(layout));
    }
}

// ------------------------------------------------------------------ field

/// Opaque initial velocity field.
pub struct BlField(VelocityFieldSpec);

/// Prototype field `U s(|x|) x/|x|` in dimension `dim`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bl_field_prototype(dim: usize, u: f64, kappa: f64, out: *mut *mut BlField) -> BlStatus {
    guard(|| {
        out!(out);
        match make_prototype(dim, u, kappa, DirectionMap::Identity) {
            Ok(f) => {
                *out = Box::into_raw(Box::new(BlField(f)));
                BlStatus::Ok
            }
            Err(e) => lab(e),
        }
    })
}

/// Evaluates `u_0(x)`; `x` and `value` both have `dim` entries.
///
/// # Safety
/// `field` from a `bl_field_*` constructor; `x` readable and `value`
/// writable for `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn bl_field_eval(field: *const BlField, x: *const f64, dim: usize, value: *mut f64) -> BlStatus {
    guard(|| {
        out!(field);
        out!(value);
        let f = &(*field).0;
        if dim != f.dim {
            return fail(BlStatus::InvalidParameter, format!("dim = {dim}, field has dim {}", f.dim));
        }
        let xs = match slice_arg(x, dim, "x") {
            Ok(v) => v,
            Err(s) => return s,
        };
        f.eval(xs, std::slice::from_raw_parts_mut(value, dim));
        BlStatus::Ok
    })
}

/// Exact viscous solution `u(t, x)` (one-dimensional fields, η = 1).
///
/// # Safety
/// `field` from a `bl_field_*` constructor; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bl_field_cole_hopf(field: *const BlField, t: f64, x: f64, out: *mut f64) -> BlStatus {
    guard(|| {
        out!(field);
        out!(out);
        match cole_hopf_1d(&(*field).0, &OracleQuery::new(t, x)) {
            Ok(v) => {
                *out = v;
                BlStatus::Ok
            }
            Err(e) => lab(e),
        }
    })
}

/// # Safety
/// `field` must be null or come from a `bl_field_*` constructor, and not be
/// used again.
#[no_mangle]
pub unsafe extern "C" fn bl_field_free(field: *mut BlField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

// ------------------------------------------------------------- experiment

/// Opaque experiment (configuration plus lazily computed iterates).
pub struct BlExperiment(Experiment);

/// Opaque verification report.
pub struct BlReport(BoundReport);

/// Parses and validates a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bl_experiment_from_toml(toml: *const c_char, out: *mut *mut BlExperiment) -> BlStatus {
    guard(|| {
        out!(out);
        let text = match str_arg(toml, "toml") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ExperimentConfig::from_toml(text).and_then(Experiment::new) {
            Ok(e) => {
                *out = Box::into_raw(Box::new(BlExperiment(e)));
                BlStatus::Ok
            }
            Err(e) => lab(e),
        }
    })
}

/// Runs the named check (e.g. `"hyp1"`, `"mt_tail"`), computing iterates
/// first if the check needs them.
///
/// # Safety
/// `exp` from [`bl_experiment_from_toml`]; `check` NUL-terminated; `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn bl_experiment_run(
    exp: *mut BlExperiment,
    check: *const c_char,
    out: *mut *mut BlReport,
) -> BlStatus {
    guard(|| {
        out!(exp);
        out!(out);
        let name = match str_arg(check, "check") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let Some(id) = CheckId::ALL.into_iter().find(|c| c.name() == name) else {
            return fail(BlStatus::UnknownCheck, format!("unknown check `{name}`"));
        };
        match (*exp).0.run(id) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(BlReport(r)));
                BlStatus::Ok
            }
            Err(e) => lab(e),
        }
    })
}

/// # Safety
/// `exp` must be null or come from [`bl_experiment_from_toml`], and not be
/// used again.
#[no_mangle]
pub unsafe extern "C" fn bl_experiment_free(exp: *mut BlExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Whether the check passed, and its fitted constant.
///
/// # Safety
/// `report` from [`bl_experiment_run`]; out pointers null or writable.
#[no_mangle]
pub unsafe extern "C" fn bl_report_summary(report: *const BlReport, pass: *mut bool, fitted: *mut f64) -> BlStatus {
    guard(|| {
        out!(report);
        let r = &(*report).0;
        if !pass.is_null() {
            *pass = r.pass;
        }
        if !fitted.is_null() {
            *fitted = r.fitted_constant;
        }
        BlStatus::Ok
    })
}

/// The report as JSON; see [`bl_last_error`] for the buffer protocol.
///
/// # Safety
/// `report` from [`bl_experiment_run`]; `buf` null or valid for `cap`
/// bytes; `needed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn bl_report_json(
    report: *const BlReport,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> BlStatus {
    guard(|| {
        out!(report);
        copy_text(&(*report).0.to_json(), buf, cap, needed)
    })
}

/// # Safety
/// `report` must be null or come from [`bl_experiment_run`], and not be
/// used again.
#[no_mangle]
pub unsafe extern "C" fn bl_report_free(report: *mut BlReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}
