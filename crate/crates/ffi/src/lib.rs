//! C ABI over the `hrf` library.
//!
//! Every fallible function returns an [`HrfStatus`]. On failure a
//! human-readable message is stored per thread and can be read with
//! [`hrf_last_error_message`]. Models are opaque handles created by
//! [`hrf_model_load`] and released with [`hrf_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hrf::distributions::{DistributionSpec, VelocityLaw};
use hrf::field::DirectionField;
use hrf::hrf::{seeded, stream};
use hrf::sampler::{sample_batch, SamplerOptions, SamplerSchedule};
use hrf::Error;

/// Result codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HrfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    Checkpoint = 6,
    UndefinedRegion = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Opaque handle to a trained model.
pub struct HrfModel {
    inner: hrf::hrf::HrfModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> HrfStatus {
    match err {
        Error::Config(_) => HrfStatus::Config,
        Error::Argument(_) | Error::Shape { .. } | Error::UnsupportedDensity(_) => HrfStatus::InvalidArgument,
        Error::UndefinedRegion { .. } => HrfStatus::UndefinedRegion,
        Error::Checkpoint { .. } => HrfStatus::Checkpoint,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => HrfStatus::Io,
        e if e.is_numerical() => HrfStatus::Numerical,
        _ => HrfStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), (HrfStatus, String)>>(f: F) -> HrfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HrfStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            HrfStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (HrfStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (HrfStatus, String) {
    (HrfStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `ptr` must be null or point to `len` readable values.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], (HrfStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// Message for the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hrf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hrf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint written by `hrf train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn hrf_model_load(path: *const c_char, out: *mut *mut HrfModel) -> HrfStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (HrfStatus::InvalidArgument, "path is not valid UTF-8".to_string()))?;
        let ck = hrf::nn::Checkpoint::load(Path::new(path)).map_err(lib_err)?;
        let inner = hrf::hrf::HrfModel::from_checkpoint(&ck).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(HrfModel { inner }));
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`hrf_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hrf_model_free(model: *mut HrfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of hierarchy levels, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hrf_model_depth(model: *const HrfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.depth())
}

/// Data dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hrf_model_dim(model: *const HrfModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.dim())
}

/// Draws `n` samples with Euler step counts `steps[0..depth]` into `out`
/// (row-major, `n * dim` values). The same seed reproduces the output.
///
/// # Safety
/// `steps` must hold `n_levels` values and `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn hrf_model_sample(
    model: *const HrfModel,
    steps: *const usize,
    n_levels: usize,
    n: usize,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> HrfStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let steps = slice(steps, n_levels, "steps")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let need = n * model.inner.dim();
        if out_len < need {
            return Err((
                HrfStatus::BufferTooSmall,
                format!("out holds {out_len} values, {need} needed"),
            ));
        }
        let schedule = SamplerSchedule::new(steps.to_vec()).map_err(lib_err)?;
        let mut rng = seeded(seed, stream::SAMPLE);
        let set = sample_batch(&model.inner, &schedule, n, &mut rng, SamplerOptions::default()).map_err(lib_err)?;
        std::slice::from_raw_parts_mut(out, need).copy_from_slice(&set.points);
        Ok(())
    })
}

/// Closed-form velocity density at `v` given `(x_t, t)`, for a standard
/// normal source and a 1D Gaussian mixture target with `k` components.
///
/// # Safety
/// `weights`, `means` and `stds` must hold `k` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hrf_velocity_pdf_1d(
    weights: *const f64,
    means: *const f64,
    stds: *const f64,
    k: usize,
    v: f64,
    x_t: f64,
    t: f64,
    out: *mut f64,
) -> HrfStatus {
    guard(|| {
        let (w, m, s) = (
            slice(weights, k, "weights")?,
            slice(means, k, "means")?,
            slice(stds, k, "stds")?,
        );
        if out.is_null() {
            return Err(null("out"));
        }
        let target = DistributionSpec::mixture_1d(w, m, s);
        target.validate().map_err(lib_err)?;
        let law = VelocityLaw::new(DistributionSpec::gaussian(1), target).map_err(lib_err)?;
        *out = law.velocity_pdf(&[v], &[x_t], t).map_err(lib_err)?;
        Ok(())
    })
}

/// Exact 1-Wasserstein distance between two 1D samples.
///
/// # Safety
/// `a` must hold `na` values, `b` must hold `nb`, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hrf_wasserstein1(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut f64,
) -> HrfStatus {
    guard(|| {
        let (a, b) = (slice(a, na, "a")?, slice(b, nb, "b")?);
        if out.is_null() {
            return Err(null("out"));
        }
        *out = hrf::metrics::wasserstein1_1d(a, b).map_err(lib_err)?;
        Ok(())
    })
}
