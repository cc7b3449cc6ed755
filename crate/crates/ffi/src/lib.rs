//! C ABI over `flowsde`.
//!
//! Every fallible function returns a [`FlowsdeStatus`]; on failure a description is
//! available from [`flowsde_last_error`] on the same thread. Handles are opaque and
//! must be released with their `_free` function. Array arguments are row-major and
//! their lengths are given by the documented shapes.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use flowsde::integrator::{simulate_reverse, RngSpec, SimulationOptions, TimeGrid, TrajectoryEnsemble};
use flowsde::sde::reverse_family_coefficients;
use flowsde::stats::gaussian_kl;
use flowsde::{flow, DiffusionSchedule, Error, Family, FlowField, GaussianEndpoint, GaussianMixtureEndpoint};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowsdeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    Pole = 3,
    Domain = 4,
    DimensionMismatch = 5,
    InsufficientData = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowsdeFamily {
    Deterministic = 0,
    Constant = 1,
    Singular = 2,
    NonSingular = 3,
    ZeroEnds = 4,
    /// Uses `n` and `m` of [`FlowsdeSampler`].
    CustomPower = 5,
}

/// Diffusion schedule `g~(t) = alpha t^(n/2) (1-t)^(m/2)`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FlowsdeSampler {
    pub family: FlowsdeFamily,
    pub alpha: f64,
    pub n: u32,
    pub m: i32,
}

/// A flow field with a Gaussian `p1`.
pub struct FlowsdeField {
    inner: Box<dyn FlowField>,
}

/// Simulated trajectories of one trial.
pub struct FlowsdeEnsemble {
    inner: TrajectoryEnsemble,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> FlowsdeStatus {
    match e {
        Error::Pole { .. } => FlowsdeStatus::Pole,
        Error::Domain { .. } => FlowsdeStatus::Domain,
        Error::InvalidParameter { .. } => FlowsdeStatus::InvalidParameter,
        Error::DimensionMismatch { .. } => FlowsdeStatus::DimensionMismatch,
        Error::InsufficientData(_) => FlowsdeStatus::InsufficientData,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FlowsdeStatus {
    set_last_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FlowsdeStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_last_error(&format!("null pointer passed for `{what}`"));
            FlowsdeStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic");
            FlowsdeStatus::Panic
        }
    }
}

unsafe fn slice_in<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

fn schedule_of(s: &FlowsdeSampler) -> Result<DiffusionSchedule, Error> {
    let family = match s.family {
        FlowsdeFamily::Deterministic => return Ok(DiffusionSchedule::deterministic()),
        FlowsdeFamily::Constant => Family::Constant,
        FlowsdeFamily::Singular => Family::Singular,
        FlowsdeFamily::NonSingular => Family::NonSingular,
        FlowsdeFamily::ZeroEnds => Family::ZeroEnds,
        FlowsdeFamily::CustomPower => Family::CustomPower { n: s.n, m: s.m },
    };
    DiffusionSchedule::new(family, s.alpha)
}

fn dim_arg(dim: usize) -> Result<usize, Error> {
    if dim == 0 {
        Err(Error::InvalidParameter {
            name: "dim",
            reason: "must be at least 1".into(),
        })
    } else {
        Ok(dim)
    }
}

/// Message for the last failed call on this thread; empty after a successful call.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn flowsde_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn flowsde_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Flow from `N(mean0, var0 I)` to `N(mean1, var1 I)`; `mean0` and `mean1` have `dim` entries.
///
/// # Safety
/// `mean0` and `mean1` must point to `dim` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flowsde_field_gaussian(
    dim: usize,
    mean0: *const f64,
    var0: f64,
    mean1: *const f64,
    var1: f64,
    out: *mut *mut FlowsdeField,
) -> FlowsdeStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let d = dim_arg(dim)?;
        let p0 = GaussianEndpoint::new(slice_in(mean0, d, "mean0")?.to_vec(), var0)?;
        let p1 = GaussianEndpoint::new(slice_in(mean1, d, "mean1")?.to_vec(), var1)?;
        let field = flow::GaussianFlow::new(p0, p1)?;
        *out = Box::into_raw(Box::new(FlowsdeField { inner: Box::new(field) }));
        Ok(())
    })
}

/// Flow from a mixture of `components` isotropic Gaussians to `N(mean1, var1 I)`.
/// `means` is `[components x dim]`; `weights` and `variances` have `components` entries.
///
/// # Safety
/// All pointers must reference arrays of the stated shapes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flowsde_field_mixture(
    dim: usize,
    components: usize,
    weights: *const f64,
    means: *const f64,
    variances: *const f64,
    mean1: *const f64,
    var1: f64,
    out: *mut *mut FlowsdeField,
) -> FlowsdeStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let d = dim_arg(dim)?;
        let w = slice_in(weights, components, "weights")?;
        let m = slice_in(means, components * d, "means")?;
        let v = slice_in(variances, components, "variances")?;
        let comps = (0..components)
            .map(|i| Ok((w[i], GaussianEndpoint::new(m[i * d..(i + 1) * d].to_vec(), v[i])?)))
            .collect::<Result<Vec<_>, Error>>()?;
        let p0 = GaussianMixtureEndpoint::new(comps)?;
        let p1 = GaussianEndpoint::new(slice_in(mean1, d, "mean1")?.to_vec(), var1)?;
        let field = flow::MixtureFlow::new(p0, p1)?;
        *out = Box::into_raw(Box::new(FlowsdeField { inner: Box::new(field) }));
        Ok(())
    })
}

/// # Safety
/// `field` must come from a `flowsde_field_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn flowsde_field_free(field: *mut FlowsdeField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// Dimension of the field, or 0 for a null handle.
///
/// # Safety
/// `field` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn flowsde_field_dim(field: *const FlowsdeField) -> usize {
    field.as_ref().map_or(0, |f| f.inner.dim())
}

/// Writes `v(x, t)` to `out` (`dim` entries).
///
/// # Safety
/// `field` must be live; `x` and `out` must reference `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn flowsde_velocity(
    field: *const FlowsdeField,
    x: *const f64,
    t: f64,
    out: *mut f64,
) -> FlowsdeStatus {
    guard(|| {
        let f = &deref(field, "field")?.inner;
        let d = f.dim();
        let x = slice_in(x, d, "x")?;
        let out = slice_out(out, d, "out")?;
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Domain {
                what: "velocity",
                t,
                reason: "requires 0 <= t <= 1",
            }
            .into());
        }
        f.velocity_into(x, t, out);
        Ok(())
    })
}

/// Writes the score imputed from the velocity to `out`; fails with a domain error at `t = 0`.
///
/// # Safety
/// As [`flowsde_velocity`].
#[no_mangle]
pub unsafe extern "C" fn flowsde_score(
    field: *const FlowsdeField,
    x: *const f64,
    t: f64,
    out: *mut f64,
) -> FlowsdeStatus {
    guard(|| {
        let f = &deref(field, "field")?.inner;
        let d = f.dim();
        let x = slice_in(x, d, "x")?;
        let out = slice_out(out, d, "out")?;
        out.copy_from_slice(&flow::score_from_velocity(&**f, x, t)?);
        Ok(())
    })
}

/// Evaluates `g~(t)`.
///
/// # Safety
/// `sampler` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn flowsde_g_tilde(sampler: *const FlowsdeSampler, t: f64, out: *mut f64) -> FlowsdeStatus {
    guard(|| {
        let s = schedule_of(deref(sampler, "sampler")?)?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = s.g_tilde(t)?;
        Ok(())
    })
}

/// Reverse-time drift (`dim` entries) and diffusion of the sampler at `(x, t)`.
///
/// # Safety
/// `field` and `sampler` must be live; `x` and `drift` must reference `dim` doubles;
/// `diffusion` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flowsde_reverse_coefficients(
    field: *const FlowsdeField,
    sampler: *const FlowsdeSampler,
    x: *const f64,
    t: f64,
    drift: *mut f64,
    diffusion: *mut f64,
) -> FlowsdeStatus {
    guard(|| {
        let f = &deref(field, "field")?.inner;
        let s = schedule_of(deref(sampler, "sampler")?)?;
        let d = f.dim();
        let x = slice_in(x, d, "x")?;
        let drift = slice_out(drift, d, "drift")?;
        if diffusion.is_null() {
            return Err(Fail::Null("diffusion"));
        }
        let c = reverse_family_coefficients(&**f, &s, x, t)?;
        drift.copy_from_slice(&c.drift);
        *diffusion = c.diffusion;
        Ok(())
    })
}

/// Runs `count` reverse-time trajectories from `p1` at `t_start` to `t = 0` over
/// `num_steps` Euler–Maruyama steps. A non-finite `t_start` selects the family default
/// (`1`, or `1 - 1e-3` for families with a pole at `t = 1`).
///
/// # Safety
/// `field` and `sampler` must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flowsde_simulate(
    field: *const FlowsdeField,
    sampler: *const FlowsdeSampler,
    t_start: f64,
    num_steps: usize,
    count: usize,
    seed: u64,
    trial: u64,
    final_step_noise: bool,
    out: *mut *mut FlowsdeEnsemble,
) -> FlowsdeStatus {
    guard(|| {
        let f = &deref(field, "field")?.inner;
        let s = schedule_of(deref(sampler, "sampler")?)?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let t0 = if t_start.is_finite() { t_start } else { s.default_t_start() };
        let grid = TimeGrid::new(t0, num_steps)?;
        let options = SimulationOptions {
            trial,
            final_step_noise,
            ..Default::default()
        };
        let ens = simulate_reverse(&**f, &s, &grid, count, &RngSpec::new(seed), &options)?;
        *out = Box::into_raw(Box::new(FlowsdeEnsemble { inner: ens }));
        Ok(())
    })
}

/// # Safety
/// `ensemble` must come from [`flowsde_simulate`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn flowsde_ensemble_free(ensemble: *mut FlowsdeEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// # Safety
/// `ensemble` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn flowsde_ensemble_count(ensemble: *const FlowsdeEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.inner.count())
}

/// # Safety
/// `ensemble` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn flowsde_ensemble_dim(ensemble: *const FlowsdeEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.inner.dim())
}

/// Number of recorded times (`num_steps + 1`).
///
/// # Safety
/// `ensemble` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn flowsde_ensemble_num_times(ensemble: *const FlowsdeEnsemble) -> usize {
    ensemble.as_ref().map_or(0, |e| e.inner.times().len())
}

/// # Safety
/// `ensemble` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn flowsde_ensemble_diverged(ensemble: *const FlowsdeEnsemble) -> bool {
    ensemble.as_ref().is_some_and(|e| e.inner.diverged())
}

/// Copies the recorded times (descending) into `out`, which holds `len` doubles.
///
/// # Safety
/// `ensemble` must be live; `out` must reference `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn flowsde_ensemble_times(
    ensemble: *const FlowsdeEnsemble,
    out: *mut f64,
    len: usize,
) -> FlowsdeStatus {
    guard(|| {
        let times = deref(ensemble, "ensemble")?.inner.times();
        copy_exact(times, out, len)
    })
}

/// Copies the `t = 0` states, `[count x dim]`, into `out`, which holds `len` doubles.
///
/// # Safety
/// `ensemble` must be live; `out` must reference `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn flowsde_ensemble_final_states(
    ensemble: *const FlowsdeEnsemble,
    out: *mut f64,
    len: usize,
) -> FlowsdeStatus {
    guard(|| {
        let states = deref(ensemble, "ensemble")?.inner.final_states();
        copy_exact(&states, out, len)
    })
}

unsafe fn copy_exact(src: &[f64], out: *mut f64, len: usize) -> Result<(), Fail> {
    if len != src.len() {
        return Err(Error::DimensionMismatch {
            expected: src.len(),
            got: len,
        }
        .into());
    }
    slice_out(out, len, "out")?.copy_from_slice(src);
    Ok(())
}

/// `KL(N(m1, v1) || N(m2, v2))`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flowsde_gaussian_kl(m1: f64, v1: f64, m2: f64, v2: f64, out: *mut f64) -> FlowsdeStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = gaussian_kl(m1, v1, m2, v2)?;
        Ok(())
    })
}
