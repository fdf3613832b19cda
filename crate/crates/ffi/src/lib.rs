//! C ABI over the lab. Every function returns an [`AgmonStatus`]; on failure
//! a message is kept per thread and read back with [`agmon_last_error`].
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use agmon_core::cli::{run_file, CliError, RunOptions};
use agmon_core::fcalc::{almost_analytic_extension, hs_apply, spectral_f};
use agmon_core::halfplane::{apply_halfplane_poisson, exterior_mass_fraction, poisson_multiplier, BoundaryFunction};
use agmon_core::hjphase::{solve_phase_series, PhaseKind, PhaseSeries};
use agmon_core::models::{make_model, ModelProblem};
use agmon_core::{Complex64, Error};
use nalgebra::DMatrix;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgmonStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownModel = 3,
    Numerical = 4,
    Io = 5,
    Panic = 6,
    BufferTooSmall = 7,
    /// The run completed but at least one verdict failed.
    VerdictFailed = 8,
}

/// Opaque model handle.
pub struct AgmonModel {
    inner: ModelProblem,
}

/// Opaque phase-series handle.
pub struct AgmonPhaseSeries {
    inner: PhaseSeries,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

struct Fail(AgmonStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::UnknownModel(_) => AgmonStatus::UnknownModel,
            Error::InvalidParameter { .. } | Error::Config(_) | Error::GridMismatch(_) => AgmonStatus::InvalidArgument,
            Error::OutsideDomain(_) | Error::Precondition(_) | Error::Unsupported(_) => AgmonStatus::InvalidArgument,
            Error::Io(_) => AgmonStatus::Io,
            Error::Numerical(_) | Error::InvariantViolation { .. } => AgmonStatus::Numerical,
        };
        Fail(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(AgmonStatus::InvalidArgument, msg.into())
}

fn null(what: &str) -> Fail {
    Fail(AgmonStatus::NullPointer, format!("`{what}` is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Fail>) -> AgmonStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            AgmonStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            AgmonStatus::Panic
        }
    }
}

unsafe fn cstr<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("`{what}` is not UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn write<T>(p: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(v);
    Ok(())
}

/// NUL-terminated crate version; static storage.
#[no_mangle]
pub extern "C" fn agmon_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message (NUL-terminated) into
/// `buf`. `needed` receives the required capacity including the NUL; pass a
/// null `buf` with `cap = 0` to query it.
///
/// # Safety
/// `buf` must be valid for `cap` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn agmon_last_error(buf: *mut c_char, cap: usize, needed: *mut usize) -> AgmonStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    let len = msg.len() + 1;
    if !needed.is_null() {
        needed.write(len);
    }
    if cap < len {
        return AgmonStatus::BufferTooSmall;
    }
    if buf.is_null() {
        return AgmonStatus::NullPointer;
    }
    ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), msg.len());
    buf.add(msg.len()).write(0);
    AgmonStatus::Ok
}

/// Builds a catalogue model. `params_json` is a JSON object of numeric
/// overrides, or null for the defaults.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agmon_model_new(
    name: *const c_char,
    params_json: *const c_char,
    out: *mut *mut AgmonModel,
) -> AgmonStatus {
    guard(|| {
        let name = cstr(name, "name")?;
        let params: BTreeMap<String, f64> = if params_json.is_null() {
            BTreeMap::new()
        } else {
            serde_json::from_str(cstr(params_json, "params_json")?)
                .map_err(|e| invalid(format!("params_json: {e}")))?
        };
        let model = make_model(name, &params)?;
        write(out, Box::into_raw(Box::new(AgmonModel { inner: model })), "out")
    })
}

/// # Safety
/// `model` must come from [`agmon_model_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn agmon_model_free(model: *mut AgmonModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Reference energy E, collar half-width r₀ and the margin min(V − E).
///
/// # Safety
/// `model` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn agmon_model_info(
    model: *const AgmonModel,
    energy: *mut f64,
    collar_width: *mut f64,
    margin: *mut f64,
) -> AgmonStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        write(energy, m.inner.energy, "energy")?;
        write(collar_width, m.inner.collar_width, "collar_width")?;
        write(margin, m.inner.margin, "margin")
    })
}

/// V − E at `(x', x_n)`.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agmon_model_excess(
    model: *const AgmonModel,
    xprime: f64,
    xn: f64,
    out: *mut f64,
) -> AgmonStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        write(out, m.inner.excess(xprime, xn), "out")
    })
}

/// Flat Poisson multiplier `e^{−(ρ/h)√(1+ξ²)}`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agmon_poisson_multiplier(xi: f64, rho: f64, h: f64, out: *mut f64) -> AgmonStatus {
    guard(|| {
        if !(h > 0.0) || !(rho >= 0.0) {
            return Err(invalid("need h > 0 and rho >= 0"));
        }
        write(out, poisson_multiplier(xi, rho, h), "out")
    })
}

unsafe fn boundary(re: *const f64, im: *const f64, n: usize, length: f64, h: f64) -> Result<BoundaryFunction, Fail> {
    let re = slice(re, n, "re")?;
    let values: Vec<Complex64> = if im.is_null() {
        re.iter().map(|r| Complex64::new(*r, 0.0)).collect()
    } else {
        let im = slice(im, n, "im")?;
        re.iter().zip(im).map(|(r, i)| Complex64::new(*r, *i)).collect()
    };
    Ok(BoundaryFunction::new(values, length, h)?)
}

/// Applies the flat half-plane Poisson operator at height ρ to `n` samples
/// (`n` a power of two) of period `length`. `im` / `out_im` may be null for
/// real data.
///
/// # Safety
/// Input arrays must hold `n` values and output arrays `n` slots.
#[no_mangle]
pub unsafe extern "C" fn agmon_halfplane_poisson(
    re: *const f64,
    im: *const f64,
    n: usize,
    length: f64,
    h: f64,
    rho: f64,
    out_re: *mut f64,
    out_im: *mut f64,
) -> AgmonStatus {
    guard(|| {
        let phi = boundary(re, im, n, length, h)?;
        let u = apply_halfplane_poisson(&phi, rho);
        let out_re = slice_mut(out_re, n, "out_re")?;
        for (o, v) in out_re.iter_mut().zip(u.values()) {
            *o = v.re;
        }
        if !out_im.is_null() {
            let out_im = slice_mut(out_im, n, "out_im")?;
            for (o, v) in out_im.iter_mut().zip(u.values()) {
                *o = v.im;
            }
        }
        Ok(())
    })
}

/// Fraction of semiclassical Fourier mass outside |ξ| ≤ δ.
///
/// # Safety
/// Input arrays must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agmon_exterior_mass_fraction(
    re: *const f64,
    im: *const f64,
    n: usize,
    length: f64,
    h: f64,
    delta: f64,
    out: *mut f64,
) -> AgmonStatus {
    guard(|| {
        let phi = boundary(re, im, n, length, h)?;
        write(out, exterior_mass_fraction(&phi, delta)?, "out")
    })
}

unsafe fn square(p: *const f64, n: usize) -> Result<DMatrix<f64>, Fail> {
    if n == 0 {
        return Err(invalid("matrix dimension must be positive"));
    }
    let data = slice(p, n * n, "p")?;
    Ok(DMatrix::from_row_slice(n, n, data))
}

unsafe fn store(m: &DMatrix<f64>, out: *mut f64, n: usize) -> Result<(), Fail> {
    let out = slice_mut(out, n * n, "out")?;
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = m[(i, j)];
        }
    }
    Ok(())
}

/// `f_λ(P)` of a symmetric row-major `n × n` matrix via the
/// Helffer–Sjöstrand quadrature (`spectral = 0`) or an eigendecomposition
/// (`spectral = 1`).
///
/// # Safety
/// `p` must hold `n²` values and `out` `n²` slots.
#[no_mangle]
pub unsafe extern "C" fn agmon_hs_apply(
    p: *const f64,
    n: usize,
    lambda: f64,
    h: f64,
    spectral: i32,
    out: *mut f64,
) -> AgmonStatus {
    guard(|| {
        let m = square(p, n)?;
        let f = if spectral != 0 {
            spectral_f(&m, lambda, h)?
        } else {
            let ext = almost_analytic_extension(lambda, h, 2)?;
            hs_apply(&m, &ext)?
        };
        store(&f, out, n)
    })
}

/// Formal phase series of order `order` on the ξ' grid `xi[0..nxi]`.
/// `ambient = 0` selects the Agmon-metric normalization.
///
/// # Safety
/// `model` must be live, `xi` must hold `nxi` values, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn agmon_phase_series_new(
    model: *const AgmonModel,
    order: usize,
    xi: *const f64,
    nxi: usize,
    ambient: i32,
    out: *mut *mut AgmonPhaseSeries,
) -> AgmonStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let xi = slice(xi, nxi, "xi")?;
        if xi.is_empty() {
            return Err(invalid("xi grid is empty"));
        }
        let kind = if ambient != 0 { PhaseKind::Ambient } else { PhaseKind::Agmon };
        let s = solve_phase_series(&m.inner, kind, order, xi, 1)?;
        write(out, Box::into_raw(Box::new(AgmonPhaseSeries { inner: s })), "out")
    })
}

/// # Safety
/// `series` must come from [`agmon_phase_series_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn agmon_phase_series_free(series: *mut AgmonPhaseSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// `φ₁` and `∂_{x_n}φ₁` at `(ξ', x_n)` for a tangentially constant series.
/// In the Agmon normalization `φ₁` excludes the zero-section term `x_n`.
///
/// # Safety
/// `series` must be live; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn agmon_phase_eval(
    series: *const AgmonPhaseSeries,
    xi: f64,
    xn: f64,
    phase: *mut f64,
    derivative: *mut f64,
) -> AgmonStatus {
    guard(|| {
        let s = series.as_ref().ok_or_else(|| null("series"))?;
        let (p, d) = s.inner.eval_at(xi, xn)?;
        write(phase, p, "phase")?;
        write(derivative, d, "derivative")
    })
}

/// Runs every experiment in a JSON config file. `out_dir` and `only` may be
/// null. Returns [`AgmonStatus::VerdictFailed`] when the run finished with
/// failing verdicts; `failed` receives their count.
///
/// # Safety
/// String arguments must be NUL-terminated; `failed` may be null.
#[no_mangle]
pub unsafe extern "C" fn agmon_run_config(
    path: *const c_char,
    out_dir: *const c_char,
    only: *const c_char,
    failed: *mut usize,
) -> AgmonStatus {
    let mut count = 0usize;
    let status = guard(|| {
        let path = PathBuf::from(cstr(path, "path")?);
        let out = if out_dir.is_null() { None } else { Some(PathBuf::from(cstr(out_dir, "out_dir")?)) };
        let only = if only.is_null() { None } else { Some(cstr(only, "only")?.parse().map_err(invalid)?) };
        let reports = run_file(&path, only, &RunOptions { out, ..Default::default() }).map_err(|e| {
            let status = match &e {
                CliError::Config(_) => AgmonStatus::InvalidArgument,
                CliError::Io { .. } => AgmonStatus::Io,
                CliError::Module { source, .. } => Fail::from(source.clone()).0,
                CliError::Plot(_) => AgmonStatus::Numerical,
            };
            Fail(status, e.to_string())
        })?;
        count = reports.iter().map(|r| r.failed().len()).sum();
        if count > 0 {
            return Err(Fail(AgmonStatus::VerdictFailed, format!("{count} verdict(s) failed")));
        }
        Ok(())
    });
    if !failed.is_null() {
        failed.write(count);
    }
    status
}
