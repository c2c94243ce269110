//! C ABI for `cbi-lab`.
//!
//! Models live behind the opaque `CbiModel` handle created by
//! [`cbi_model_from_json`] and released with [`cbi_model_free`]. Every
//! fallible function returns a [`CbiStatus`]; on failure a description is
//! available from [`cbi_last_error`] on the same thread. Matrices are passed
//! as row-major `double` arrays. Output buffers are caller-allocated and
//! their length is checked.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use cbi_lab::coefficients::DerivedCoefficients;
use cbi_lab::harness::ks_distance;
use cbi_lab::io::parse_model;
use cbi_lab::linalg::Mat;
use cbi_lab::moments::{classify, mean_at};
use cbi_lab::rng::path_rng;
use cbi_lab::simulate::{sample_limit_exact, CbiDynamics, Stepping};
use cbi_lab::spectral::matrix_exp;
use cbi_lab::{Error, Regime, ValidatedModel};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Validation = 4,
    Spectral = 5,
    Quadrature = 6,
    Coefficients = 7,
    Moments = 8,
    Simulation = 9,
    Harness = 10,
    Io = 11,
    BufferTooSmall = 12,
    InvalidArgument = 13,
    Panic = 14,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbiRegime {
    Subcritical = -1,
    Critical = 0,
    Supercritical = 1,
}

/// Opaque validated model.
pub struct CbiModel {
    model: ValidatedModel,
}

struct Failure {
    status: CbiStatus,
    message: String,
}

impl Failure {
    fn new(status: CbiStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Validation(_) => CbiStatus::Validation,
            Error::Spectral(_) => CbiStatus::Spectral,
            Error::Quadrature(_) => CbiStatus::Quadrature,
            Error::Coefficients(_) => CbiStatus::Coefficients,
            Error::Moments(_) => CbiStatus::Moments,
            Error::Simulation(_) => CbiStatus::Simulation,
            Error::Harness(_) => CbiStatus::Harness,
            Error::Io(cbi_lab::io::IoError::Parse { .. }) => CbiStatus::Parse,
            Error::Io(_) => CbiStatus::Io,
        };
        Self::new(status, e.to_string())
    }
}

macro_rules! impl_from_module_error {
    ($($t:ty),*) => {
        $(impl From<$t> for Failure {
            fn from(e: $t) -> Self {
                Error::from(e).into()
            }
        })*
    };
}

impl_from_module_error!(
    cbi_lab::simulate::SimulationError,
    cbi_lab::harness::HarnessError,
    cbi_lab::io::IoError
);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> CbiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CbiStatus::Ok,
        Ok(Err(fail)) => {
            set_last_error(&fail.message);
            fail.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            CbiStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(m: *const CbiModel) -> Result<&'a ValidatedModel, Failure> {
    m.as_ref()
        .map(|h| &h.model)
        .ok_or_else(|| Failure::new(CbiStatus::NullPointer, "model handle is null"))
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(CbiStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize, name: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(Failure::new(CbiStatus::NullPointer, format!("{name} is null")));
    }
    if len < need {
        return Err(Failure::new(
            CbiStatus::BufferTooSmall,
            format!("{name} holds {len} values, {need} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn in_slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(CbiStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cbi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cbi_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses and validates a JSON model document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cbi_model_from_json(json: *const c_char, out: *mut *mut CbiModel) -> CbiStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if json.is_null() {
            return Err(Failure::new(CbiStatus::NullPointer, "json is null"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Failure::new(CbiStatus::InvalidUtf8, e.to_string()))?;
        let model = parse_model(text)?.to_model()?;
        *out = Box::into_raw(Box::new(CbiModel { model }));
        Ok(())
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from [`cbi_model_from_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cbi_model_free(model: *mut CbiModel) {
    if !model.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(model))));
    }
}

/// # Safety
/// Pointers must be valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn cbi_model_dim(model: *const CbiModel, out: *mut usize) -> CbiStatus {
    guard(|| {
        *out_ref(out, "out")? = model_ref(model)?.d();
        Ok(())
    })
}

/// Regime and spectral bound of the effective branching matrix.
///
/// # Safety
/// Pointers must be valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn cbi_classify(
    model: *const CbiModel,
    regime: *mut CbiRegime,
    s: *mut f64,
) -> CbiStatus {
    guard(|| {
        let c = classify(model_ref(model)?)?;
        *out_ref(regime, "regime")? = match c.regime {
            Regime::Subcritical => CbiRegime::Subcritical,
            Regime::Critical => CbiRegime::Critical,
            Regime::Supercritical => CbiRegime::Supercritical,
        };
        *out_ref(s, "s")? = c.s;
        Ok(())
    })
}

/// Perron vectors `u`, `v` (each `d` values) and the decay constants. For
/// `d = 1`, `kappa` is `+inf`.
///
/// # Safety
/// `u` and `v` must hold `len` doubles; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cbi_perron(
    model: *const CbiModel,
    u: *mut f64,
    v: *mut f64,
    len: usize,
    kappa: *mut f64,
    cconst: *mut f64,
) -> CbiStatus {
    guard(|| {
        let m = model_ref(model)?;
        let sp = DerivedCoefficients::compute(m)?.spectral;
        let d = m.d();
        out_slice(u, len, d, "u")?[..d].copy_from_slice(sp.u.as_slice());
        out_slice(v, len, d, "v")?[..d].copy_from_slice(sp.v.as_slice());
        *out_ref(kappa, "kappa")? = sp.kappa;
        *out_ref(cconst, "cconst")? = sp.cconst;
        Ok(())
    })
}

/// Coefficients `a = <v, betatilde>` and `b = <Cbar v, v>` of the limit
/// diffusion `dX = a dt + sqrt(b X^+) dW`.
///
/// # Safety
/// Pointers must be valid or NULL.
#[no_mangle]
pub unsafe extern "C" fn cbi_limit_coefficients(model: *const CbiModel, a: *mut f64, b: *mut f64) -> CbiStatus {
    guard(|| {
        let c = DerivedCoefficients::compute(model_ref(model)?)?;
        *out_ref(a, "a")? = c.a;
        *out_ref(b, "b")? = c.b;
        Ok(())
    })
}

/// `E(X_t)` into `out` (`d` values).
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cbi_mean_at(model: *const CbiModel, t: f64, out: *mut f64, len: usize) -> CbiStatus {
    guard(|| {
        let m = model_ref(model)?;
        let mean = mean_at(m, t)?;
        out_slice(out, len, m.d(), "out")?[..m.d()].copy_from_slice(mean.as_slice());
        Ok(())
    })
}

/// `e^{tA}` for a row-major `d x d` matrix `a`, written row-major into `out`.
///
/// # Safety
/// `a` and `out` must each hold `d * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn cbi_matrix_exp(a: *const f64, d: usize, t: f64, out: *mut f64) -> CbiStatus {
    guard(|| {
        if d == 0 {
            return Err(Failure::new(CbiStatus::InvalidArgument, "d must be positive"));
        }
        let src = in_slice(a, d * d, "a")?;
        let m = Mat::from_row_slice(d, d, src);
        let e = matrix_exp(&m, t).map_err(Error::from)?;
        let dst = out_slice(out, d * d, d * d, "out")?;
        for i in 0..d {
            for j in 0..d {
                dst[i * d + j] = e[(i, j)];
            }
        }
        Ok(())
    })
}

/// Integer-time skeleton `X_0, ..., X_horizon` of one CBI path drawn from
/// stream `stream` of `seed`, with adaptive steps no longer than `max_dt`.
/// Written row-major: `out[k * d + i]` is coordinate `i` at time `k`.
///
/// # Safety
/// `out` must hold `len >= (horizon + 1) * d` doubles.
#[no_mangle]
pub unsafe extern "C" fn cbi_simulate_skeleton(
    model: *const CbiModel,
    horizon: usize,
    max_dt: f64,
    seed: u64,
    stream: u64,
    out: *mut f64,
    len: usize,
) -> CbiStatus {
    guard(|| {
        let m = model_ref(model)?;
        let d = m.d();
        let need = (horizon + 1) * d;
        let dst = out_slice(out, len, need, "out")?;
        let checkpoints: Vec<f64> = (0..=horizon).map(|k| k as f64).collect();
        let states = CbiDynamics::new(m).sample_at(
            &checkpoints,
            Stepping::Adaptive(max_dt),
            &mut path_rng(seed, stream),
        )?;
        for (k, x) in states.iter().enumerate() {
            dst[k * d..(k + 1) * d].copy_from_slice(x.as_slice());
        }
        Ok(())
    })
}

/// `n` exact draws of the limit at time `t` started from 0.
///
/// # Safety
/// `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn cbi_sample_limit_exact(
    a: f64,
    b: f64,
    t: f64,
    n: usize,
    seed: u64,
    out: *mut f64,
) -> CbiStatus {
    guard(|| {
        let sample = sample_limit_exact(a, b, t, n, seed)?;
        out_slice(out, n, n, "out")?[..n].copy_from_slice(&sample.values);
        Ok(())
    })
}

/// Kolmogorov–Smirnov distance of `n` samples to `Gamma(shape, rate)`.
///
/// # Safety
/// `samples` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn cbi_ks_gamma(
    samples: *const f64,
    n: usize,
    shape: f64,
    rate: f64,
    out: *mut f64,
) -> CbiStatus {
    guard(|| {
        let xs = in_slice(samples, n, "samples")?;
        *out_ref(out, "out")? = ks_distance(xs, shape, rate)?;
        Ok(())
    })
}
