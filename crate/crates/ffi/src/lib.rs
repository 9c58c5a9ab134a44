//! C ABI over `smoney-core`.
//!
//! Every fallible function returns an [`SmoneyStatus`]; on failure a
//! human-readable message is available from [`smoney_last_error_message`]
//! on the same thread. Strings returned through `char **` out-parameters are
//! owned by the caller and must be released with [`smoney_string_free`].

use smoney::analysis;
use smoney::bounds::{self, FreeVariables, SchemeParams};
use smoney::config::RunConfig;
use smoney::oracle::{self, PreparationSpec};
use smoney::qmath::{self, Angle};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoneyStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    ConstraintViolated = 4,
    Internal = 5,
}

/// Opaque parameter set.
pub struct SmoneyParams {
    params: SchemeParams,
    free: Option<FreeVariables>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: SmoneyStatus, msg: impl std::fmt::Display) -> SmoneyStatus {
    let text = CString::new(msg.to_string().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
    status
}

fn guard(f: impl FnOnce() -> SmoneyStatus) -> SmoneyStatus {
    std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|_| fail(SmoneyStatus::Internal, "panic inside smoney"))
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, SmoneyStatus> {
    if s.is_null() {
        return Err(fail(SmoneyStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(s).to_str().map_err(|e| fail(SmoneyStatus::Parse, e))
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> SmoneyStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            SmoneyStatus::Ok
        }
        Err(e) => fail(SmoneyStatus::Internal, e),
    }
}

/// Message describing the most recent failure on this thread (empty if none).
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn smoney_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn smoney_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parse a run configuration (JSON with a `params` block and optional `free` block).
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smoney_params_from_json(json: *const c_char, out: *mut *mut SmoneyParams) -> SmoneyStatus {
    guard(|| {
        if out.is_null() {
            return fail(SmoneyStatus::NullPointer, "null out pointer");
        }
        let text = match read_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let cfg = match RunConfig::from_json(text) {
            Ok(c) => c,
            Err(e) => return fail(SmoneyStatus::Parse, e),
        };
        if let Err(e) = cfg.validate() {
            return fail(SmoneyStatus::InvalidArgument, e);
        }
        let Some(params) = cfg.params else {
            return fail(SmoneyStatus::InvalidArgument, "config has no params block");
        };
        *out = Box::into_raw(Box::new(SmoneyParams { params, free: cfg.free }));
        SmoneyStatus::Ok
    })
}

/// Parameters of the reported experiment.
#[no_mangle]
pub extern "C" fn smoney_params_experiment() -> *mut SmoneyParams {
    let cfg = RunConfig::experiment_preset();
    Box::into_raw(Box::new(SmoneyParams {
        params: cfg.params.expect("preset has params"),
        free: cfg.free,
    }))
}

/// # Safety
/// `params` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn smoney_params_free(params: *mut SmoneyParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Natural log of the robustness bound.
///
/// # Safety
/// `params` must be a live handle and `out_ln` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smoney_epsilon_rob_ln(params: *const SmoneyParams, out_ln: *mut f64) -> SmoneyStatus {
    guard(|| {
        if params.is_null() || out_ln.is_null() {
            return fail(SmoneyStatus::NullPointer, "null argument");
        }
        match bounds::epsilon_rob(&(*params).params) {
            Ok(lp) => {
                *out_ln = lp.ln;
                SmoneyStatus::Ok
            }
            Err(bounds::BoundsError::Precondition(v)) => {
                fail(SmoneyStatus::ConstraintViolated, v.iter().map(|f| f.name.as_str()).collect::<Vec<_>>().join("; "))
            }
            Err(e) => fail(SmoneyStatus::InvalidArgument, e),
        }
    })
}

/// Full bound report as JSON. Returns `ConstraintViolated` (with the report
/// still written) when any inequality fails.
///
/// # Safety
/// `params` must be a live handle carrying free variables; `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smoney_bounds_report_json(params: *const SmoneyParams, out_json: *mut *mut c_char) -> SmoneyStatus {
    guard(|| {
        if params.is_null() || out_json.is_null() {
            return fail(SmoneyStatus::NullPointer, "null argument");
        }
        let h = &*params;
        let Some(free) = h.free else {
            return fail(SmoneyStatus::InvalidArgument, "parameter set has no free variables");
        };
        let report = match bounds::evaluate_all(&h.params, &free, None) {
            Ok(r) => r,
            Err(e) => return fail(SmoneyStatus::InvalidArgument, e),
        };
        let json = match serde_json::to_string(&report) {
            Ok(j) => j,
            Err(e) => return fail(SmoneyStatus::Internal, e),
        };
        let violated: Vec<String> = report.violations().iter().map(|c| c.name.clone()).collect();
        let status = write_string(out_json, json);
        if status == SmoneyStatus::Ok && !violated.is_empty() {
            return fail(SmoneyStatus::ConstraintViolated, violated.join("; "));
        }
        status
    })
}

/// Single-qubit distinguishability bound for misalignment `theta_deg` and basis bias `beta_pb`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smoney_lambda_bound(theta_deg: f64, beta_pb: f64, out: *mut f64) -> SmoneyStatus {
    guard(|| {
        if out.is_null() {
            return fail(SmoneyStatus::NullPointer, "null out pointer");
        }
        match qmath::lambda_bound(Angle::from_degrees(theta_deg), beta_pb) {
            Ok(v) => {
                *out = v;
                SmoneyStatus::Ok
            }
            Err(e) => fail(SmoneyStatus::InvalidArgument, e),
        }
    })
}

/// Exact maximum forging-operator norm for the ideal BB84 ensemble on `n` qubits.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smoney_oracle_ideal_norm(n: u32, gamma_err: f64, out: *mut f64) -> SmoneyStatus {
    guard(|| {
        if out.is_null() {
            return fail(SmoneyStatus::NullPointer, "null out pointer");
        }
        if n == 0 || n as usize > oracle::MAX_FULL_ENUM_N {
            return fail(SmoneyStatus::InvalidArgument, format!("N = {n} outside 1..={}", oracle::MAX_FULL_ENUM_N));
        }
        match oracle::max_norm_exact(&PreparationSpec::ideal_bb84(n as usize), gamma_err) {
            Ok(r) => {
                *out = r.norm_exact;
                SmoneyStatus::Ok
            }
            Err(e) => fail(SmoneyStatus::InvalidArgument, e),
        }
    })
}

/// Parameter estimates from a count-table JSON object, returned as JSON.
///
/// # Safety
/// `counts_json` must be a NUL-terminated string and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smoney_estimate_stats_json(counts_json: *const c_char, out_json: *mut *mut c_char) -> SmoneyStatus {
    guard(|| {
        if out_json.is_null() {
            return fail(SmoneyStatus::NullPointer, "null out pointer");
        }
        let text = match read_str(counts_json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let table: analysis::CountTable = match serde_json::from_str(text) {
            Ok(t) => t,
            Err(e) => return fail(SmoneyStatus::Parse, e),
        };
        if let Err(e) = table.validate() {
            return fail(SmoneyStatus::InvalidArgument, e);
        }
        match serde_json::to_string(&analysis::estimate_stats(&table)) {
            Ok(j) => write_string(out_json, j),
            Err(e) => fail(SmoneyStatus::Internal, e),
        }
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn smoney_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
