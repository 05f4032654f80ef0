#![allow(clippy::missing_safety_doc)]
//! C ABI over `lipfree`.
//!
//! Spaces and bundles are opaque handles owned by the caller and released
//! with their `_free` function. Every fallible call returns an [`LfStatus`];
//! the message for the last failure on the calling thread is available from
//! [`lf_last_error_message`]. Strings returned by the library are released
//! with [`lf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lipfree::config::{Params, SpaceSpec};
use lipfree::free_norm::{free_space_norm, lipschitz_constant, FreeElement};
use lipfree::metric::{make_grid_space, snowflake, Ground};
use lipfree::pipeline::{run_prop33, PipelineRun, Prop33Run};
use lipfree::{CertificateSet, Error, FiniteMetricSpace};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    InvalidMetric = 4,
    Precondition = 5,
    CertificateFailed = 6,
    Solver = 7,
    Json = 8,
    Io = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LfGround {
    Linf = 0,
    L1 = 1,
    L2 = 2,
}

/// A finite metric space with a base point.
pub struct LfSpace {
    inner: FiniteMetricSpace,
}

/// Result of the extension pipeline at one scale.
pub struct LfBundle {
    inner: Prop33Run,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &Error) -> LfStatus {
    match err {
        Error::NonSquare { .. } | Error::DimensionMismatch(_) | Error::InvalidParameter(_) | Error::EmptySet => {
            LfStatus::InvalidArgument
        }
        Error::PointOutOfRange { .. } => LfStatus::InvalidArgument,
        Error::InvalidMetric(_) => LfStatus::InvalidMetric,
        Error::Precondition(_) | Error::Uncovered(_) | Error::Admission { .. } => LfStatus::Precondition,
        Error::CertificateFailed(_) => LfStatus::CertificateFailed,
        Error::Lp(_) => LfStatus::Solver,
        Error::Json(_) => LfStatus::Json,
        Error::Io(_) | Error::Csv(_) => LfStatus::Io,
    }
}

/// Runs `f`, recording any error or panic for [`lf_last_error_message`].
fn guard(f: impl FnOnce() -> Result<(), LfStatus>) -> LfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LfStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("panic inside lipfree");
            LfStatus::Panic
        }
    }
}

fn fail(err: Error) -> LfStatus {
    set_error(err.to_string());
    status_of(&err)
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, LfStatus> {
    if s.is_null() {
        set_error("null string argument");
        return Err(LfStatus::NullPointer);
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        LfStatus::InvalidUtf8
    })
}

unsafe fn read_slice<'a, T>(p: *const T, len: usize) -> Result<&'a [T], LfStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        set_error("null array argument");
        return Err(LfStatus::NullPointer);
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, LfStatus> {
    p.as_ref().ok_or_else(|| {
        set_error("null handle");
        LfStatus::NullPointer
    })
}

fn check_out<T>(out: *mut T) -> Result<(), LfStatus> {
    if out.is_null() {
        set_error("null output pointer");
        return Err(LfStatus::NullPointer);
    }
    Ok(())
}

fn to_c_string(s: String) -> Result<*mut c_char, LfStatus> {
    CString::new(s).map(CString::into_raw).map_err(|_| {
        set_error("output contains an interior NUL");
        LfStatus::Json
    })
}

/// Library version; static storage, do not free.
#[no_mangle]
pub extern "C" fn lf_version() -> *const c_char {
    static VERSION: &[u8] = concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes();
    VERSION.as_ptr() as *const c_char
}

/// Message for the last failure on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub unsafe extern "C" fn lf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a space from a JSON description (`inline`, `grid` or `random`).
#[no_mangle]
pub unsafe extern "C" fn lf_space_from_json(json: *const c_char, out: *mut *mut LfSpace) -> LfStatus {
    guard(|| {
        check_out(out)?;
        let text = read_str(json)?;
        let spec: SpaceSpec = serde_json::from_str(text).map_err(|e| fail(e.into()))?;
        let inner = spec.build().map_err(fail)?;
        *out = Box::into_raw(Box::new(LfSpace { inner }));
        Ok(())
    })
}

/// Lattice with `dims[k]` points along axis `k`.
#[no_mangle]
pub unsafe extern "C" fn lf_space_grid(
    dims: *const usize,
    ndims: usize,
    spacing: f64,
    ground: LfGround,
    out: *mut *mut LfSpace,
) -> LfStatus {
    guard(|| {
        check_out(out)?;
        let dims = read_slice(dims, ndims)?;
        let ground = match ground {
            LfGround::Linf => Ground::Linf,
            LfGround::L1 => Ground::L1,
            LfGround::L2 => Ground::L2,
        };
        let inner = make_grid_space(dims, spacing, ground).map_err(fail)?;
        *out = Box::into_raw(Box::new(LfSpace { inner }));
        Ok(())
    })
}

/// Number of points; 0 for a NULL handle.
#[no_mangle]
pub unsafe extern "C" fn lf_space_len(space: *const LfSpace) -> usize {
    space.as_ref().map_or(0, |s| s.inner.len())
}

#[no_mangle]
pub unsafe extern "C" fn lf_space_distance(space: *const LfSpace, i: usize, j: usize, out: *mut f64) -> LfStatus {
    guard(|| {
        check_out(out)?;
        let s = handle(space)?;
        let n = s.inner.len();
        if i >= n || j >= n {
            return Err(fail(Error::PointOutOfRange { index: i.max(j), len: n }));
        }
        *out = s.inner.metric.get(i, j);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lf_space_free(space: *mut LfSpace) {
    if !space.is_null() {
        drop(Box::from_raw(space));
    }
}

/// `d^alpha` on the same points.
#[no_mangle]
pub unsafe extern "C" fn lf_snowflake(space: *const LfSpace, alpha: f64, out: *mut *mut LfSpace) -> LfStatus {
    guard(|| {
        check_out(out)?;
        let s = handle(space)?;
        let metric = snowflake(&s.inner.metric, alpha).map_err(fail)?;
        let inner = s.inner.with_metric(metric).map_err(fail)?;
        *out = Box::into_raw(Box::new(LfSpace { inner }));
        Ok(())
    })
}

/// Free-space norm of `Σ weights[x] δ_x`, one weight per point.
#[no_mangle]
pub unsafe extern "C" fn lf_free_space_norm(
    space: *const LfSpace,
    weights: *const f64,
    len: usize,
    out: *mut f64,
) -> LfStatus {
    guard(|| {
        check_out(out)?;
        let s = handle(space)?;
        let w = read_slice(weights, len)?;
        if w.len() != s.inner.len() {
            return Err(fail(Error::DimensionMismatch(format!(
                "{} weights for {} points",
                w.len(),
                s.inner.len()
            ))));
        }
        let mu = FreeElement::from_dense(w).map_err(fail)?;
        *out = free_space_norm(&mu, &s.inner.metric, s.inner.base).map_err(fail)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lf_lipschitz_constant(
    space: *const LfSpace,
    values: *const f64,
    len: usize,
    out: *mut f64,
) -> LfStatus {
    guard(|| {
        check_out(out)?;
        let s = handle(space)?;
        let f = read_slice(values, len)?;
        *out = lipschitz_constant(f, &s.inner.metric).map_err(fail)?;
        Ok(())
    })
}

/// Net, cover, extension operator and `perturbations` seeded admissible
/// perturbations at scale `eps`. A negative `dim` leaves the cover order
/// unconstrained.
#[no_mangle]
pub unsafe extern "C" fn lf_prop33_run(
    space: *const LfSpace,
    eps: f64,
    dim: i64,
    perturbations: usize,
    seed: u64,
    tol: f64,
    out: *mut *mut LfBundle,
) -> LfStatus {
    guard(|| {
        check_out(out)?;
        let s = handle(space)?;
        let params = Params {
            dim: usize::try_from(dim).ok(),
            perturbations,
            ..Params::default()
        };
        let inner = run_prop33(&s.inner, 1, eps, &params, seed, tol).map_err(fail)?;
        *out = Box::into_raw(Box::new(LfBundle { inner }));
        Ok(())
    })
}

/// Whether every certificate of the bundle passed; false for NULL.
#[no_mangle]
pub unsafe extern "C" fn lf_bundle_pass(bundle: *const LfBundle) -> bool {
    bundle.as_ref().is_some_and(|b| b.inner.certificates.all_pass())
}

#[no_mangle]
pub unsafe extern "C" fn lf_bundle_net_len(bundle: *const LfBundle) -> usize {
    bundle.as_ref().map_or(0, |b| b.inner.bundle.net_cover.net.len())
}

/// Measured norm of the extension operator with respect to `bar_d`.
#[no_mangle]
pub unsafe extern "C" fn lf_bundle_e_norm(bundle: *const LfBundle, out: *mut f64) -> LfStatus {
    guard(|| {
        check_out(out)?;
        *out = handle(bundle)?.inner.bundle.e_norm.value;
        Ok(())
    })
}

/// Largest measured norm over the perturbation sweep; 0 without perturbations.
#[no_mangle]
pub unsafe extern "C" fn lf_bundle_max_g_norm(bundle: *const LfBundle, out: *mut f64) -> LfStatus {
    guard(|| {
        check_out(out)?;
        *out = handle(bundle)?
            .inner
            .perturbations
            .iter()
            .map(|p| p.g_norm)
            .fold(0.0, f64::max);
        Ok(())
    })
}

/// `sup |d − bar_d|`.
#[no_mangle]
pub unsafe extern "C" fn lf_bundle_metric_gap(bundle: *const LfBundle, out: *mut f64) -> LfStatus {
    guard(|| {
        check_out(out)?;
        let b = &handle(bundle)?.inner.bundle;
        *out = lipfree::metric::sup_distance(&b.d, &b.bar_d).map_err(fail)?;
        Ok(())
    })
}

/// Full report as JSON; release with [`lf_string_free`].
#[no_mangle]
pub unsafe extern "C" fn lf_bundle_to_json(bundle: *const LfBundle, out: *mut *mut c_char) -> LfStatus {
    guard(|| {
        check_out(out)?;
        let b = handle(bundle)?;
        let text = serde_json::to_string(&b.inner).map_err(|e| fail(e.into()))?;
        *out = to_c_string(text)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn lf_bundle_free(bundle: *mut LfBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// Rechecks a pipeline report, a certificate set or a single certificate
/// given as JSON. `*pass` is set when the call succeeds.
#[no_mangle]
pub unsafe extern "C" fn lf_certificate_verify_json(json: *const c_char, pass: *mut bool) -> LfStatus {
    guard(|| {
        check_out(pass)?;
        let text = read_str(json)?;
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| fail(e.into()))?;
        let ok = if value.get("report").is_some() {
            let run: PipelineRun = serde_json::from_value(value).map_err(|e| fail(e.into()))?;
            run.report.certificates().recheck_all()
                && run.report.reverify(lipfree::metric::DEFAULT_TOL).map_err(fail)?.all_pass()
        } else if value.get("certificates").is_some() {
            let set: CertificateSet = serde_json::from_value(value).map_err(|e| fail(e.into()))?;
            set.recheck_all()
        } else {
            let c: lipfree::Certificate = serde_json::from_value(value).map_err(|e| fail(e.into()))?;
            c.recheck()
        };
        *pass = ok;
        Ok(())
    })
}
