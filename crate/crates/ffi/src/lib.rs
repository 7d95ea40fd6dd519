//! C interface to trained models.
//!
//! Every fallible function returns a [`KdgmStatus`] and writes its result
//! through an out-pointer. On failure the message is kept per thread and
//! can be copied out with [`kdgm_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use kdgm::density::{DensityConfig, DensityEvaluator};
use kdgm::oracles::{self, OptionKind};
use kdgm::quad::{self, DensityEngine, Payoff, QuadSpec};
use kdgm::trainer::TrainedModel;
use kdgm::{persistence, Error};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KdgmStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or wrong slice length.
    InvalidArgument = 1,
    Io = 2,
    /// The model file failed validation.
    Format = 3,
    /// A query fell outside the trained domain.
    OutOfDomain = 4,
    /// Inconsistent parameters, such as a pricing request the model cannot serve.
    Config = 5,
    Other = 6,
    /// A Rust panic was caught at the boundary.
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KdgmModelKind {
    Gbm = 0,
    Heston = 1,
    TdHeston = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KdgmOptionKind {
    Call = 0,
    Put = 1,
}

impl From<KdgmOptionKind> for OptionKind {
    fn from(k: KdgmOptionKind) -> Self {
        match k {
            KdgmOptionKind::Call => OptionKind::Call,
            KdgmOptionKind::Put => OptionKind::Put,
        }
    }
}

/// A loaded model. Opaque to C.
pub struct KdgmModel {
    inner: TrainedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> KdgmStatus {
    match e {
        Error::Io { .. } => KdgmStatus::Io,
        Error::Format { .. } => KdgmStatus::Format,
        Error::OutOfDomain { .. } | Error::OutsideSchedule { .. } => KdgmStatus::OutOfDomain,
        Error::Config(_)
        | Error::MissingField(_)
        | Error::LayoutMismatch { .. }
        | Error::Dimension { .. } => KdgmStatus::Config,
        _ => KdgmStatus::Other,
    }
}

struct Invalid(&'static str);

enum Failure {
    Invalid(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<Invalid> for Failure {
    fn from(e: Invalid) -> Self {
        Failure::Invalid(e.0)
    }
}

/// Runs `f`, converting errors and panics into a status and stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KdgmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KdgmStatus::Ok,
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(msg.to_string());
            KdgmStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            KdgmStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(model: *const KdgmModel) -> Result<&'a TrainedModel, Invalid> {
    model
        .as_ref()
        .map(|m| &m.inner)
        .ok_or(Invalid("model is null"))
}

unsafe fn out_ref<'a>(out: *mut f64) -> Result<&'a mut f64, Invalid> {
    out.as_mut().ok_or(Invalid("output pointer is null"))
}

unsafe fn input_slice<'a>(ptr: *const f64, len: usize) -> Result<&'a [f64], Invalid> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(Invalid("input pointer is null"));
    }
    Ok(slice::from_raw_parts(ptr, len))
}

fn density_config(delta: f64) -> DensityConfig {
    DensityConfig {
        delta,
        ..Default::default()
    }
}

/// Loads a model file. On success `*out` owns the model; release it with
/// [`kdgm_model_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kdgm_model_load(
    path: *const c_char,
    out: *mut *mut KdgmModel,
) -> KdgmStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(Invalid("null argument").into());
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Invalid("path is not UTF-8"))?;
        let inner = persistence::load(path)?;
        *out = Box::into_raw(Box::new(KdgmModel { inner }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`kdgm_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kdgm_model_free(model: *mut KdgmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kdgm_model_kind(
    model: *const KdgmModel,
    out: *mut KdgmModelKind,
) -> KdgmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out.as_mut().ok_or(Invalid("output pointer is null"))?;
        *out = match m.model.name() {
            "gbm" => KdgmModelKind::Gbm,
            "heston" => KdgmModelKind::Heston,
            _ => KdgmModelKind::TdHeston,
        };
        Ok(())
    })
}

/// Number of network inputs.
///
/// # Safety
/// `model` must be a live handle or null (which gives 0).
#[no_mangle]
pub unsafe extern "C" fn kdgm_model_input_dim(model: *const KdgmModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.model.input_dim())
}

/// Lower and upper bound of input `coord`.
///
/// # Safety
/// `model` must be a live handle; `lo` and `hi` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn kdgm_model_bounds(
    model: *const KdgmModel,
    coord: usize,
    lo: *mut f64,
    hi: *mut f64,
) -> KdgmStatus {
    guard(|| {
        let m = model_ref(model)?;
        if coord >= m.model.input_dim() {
            return Err(Invalid("coordinate index out of range").into());
        }
        let i = m.model.domain.interval(coord);
        *out_ref(lo)? = i.lo;
        *out_ref(hi)? = i.hi;
        Ok(())
    })
}

/// The learned CDF at one input row of length `len`.
///
/// # Safety
/// `input` must point to `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn kdgm_model_eval(
    model: *const KdgmModel,
    input: *const f64,
    len: usize,
    out: *mut f64,
) -> KdgmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let input = input_slice(input, len)?;
        let out = out_ref(out)?;
        m.model.domain.check(input)?;
        *out = m.params.eval(input)?;
        Ok(())
    })
}

/// One-factor density at `(t, x, y, sigma)` with differencing step `delta`.
///
/// # Safety
/// `model` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn kdgm_density_1d(
    model: *const KdgmModel,
    t: f64,
    x: f64,
    y: f64,
    sigma: f64,
    delta: f64,
    out: *mut f64,
) -> KdgmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out_ref(out)?;
        if m.model.is_two_factor() {
            return Err(Error::Config("kdgm_density_1d needs a one-factor model".into()).into());
        }
        let eval = DensityEvaluator::new(&m.params, &m.model, density_config(delta));
        *out = eval.density_1d(t, x, y, sigma)?;
        Ok(())
    })
}

/// Two-factor density at `(t, x, v, y, z)`; `params` are the inputs after
/// `z` (four for the constant-parameter model, none otherwise).
///
/// # Safety
/// `params` must point to `n_params` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn kdgm_density_2d(
    model: *const KdgmModel,
    t: f64,
    x: f64,
    v: f64,
    y: f64,
    z: f64,
    params: *const f64,
    n_params: usize,
    delta: f64,
    out: *mut f64,
) -> KdgmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let params = input_slice(params, n_params)?;
        let out = out_ref(out)?;
        if !m.model.is_two_factor() {
            return Err(Error::Config("kdgm_density_2d needs a two-factor model".into()).into());
        }
        let eval = DensityEvaluator::new(&m.params, &m.model, density_config(delta));
        *out = eval.density_2d(t, x, v, y, z, params)?;
        Ok(())
    })
}

/// Prices a vanilla option under a one-factor model by quadrature over
/// the network density.
///
/// # Safety
/// `model` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn kdgm_price_1d(
    model: *const KdgmModel,
    kind: KdgmOptionKind,
    spot: f64,
    strike: f64,
    maturity: f64,
    sigma: f64,
    mesh_points: usize,
    out: *mut f64,
) -> KdgmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let out = out_ref(out)?;
        let mut spec = QuadSpec::new(Payoff::vanilla(kind.into(), strike), spot, maturity);
        spec.mesh_points = mesh_points;
        let engine = DensityEngine::Network {
            field: &m.params,
            model: &m.model,
            config: DensityConfig::default(),
        };
        *out = quad::price_1d(&engine, &spec, sigma)?;
        Ok(())
    })
}

/// Prices a vanilla option under a two-factor model. `vol` sets the width
/// of the log-price integration range.
///
/// # Safety
/// `params` must point to `n_params` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn kdgm_price_2d(
    model: *const KdgmModel,
    kind: KdgmOptionKind,
    spot: f64,
    strike: f64,
    maturity: f64,
    v0: f64,
    params: *const f64,
    n_params: usize,
    vol: f64,
    mesh_points: usize,
    out: *mut f64,
) -> KdgmStatus {
    guard(|| {
        let m = model_ref(model)?;
        let params = input_slice(params, n_params)?;
        let out = out_ref(out)?;
        let mut spec = QuadSpec::new(Payoff::vanilla(kind.into(), strike), spot, maturity);
        spec.mesh_points = mesh_points;
        let engine = DensityEngine::Network {
            field: &m.params,
            model: &m.model,
            config: DensityConfig::default(),
        };
        *out = quad::price_2d(&engine, &spec, v0, params, vol)?;
        Ok(())
    })
}

/// Black-Scholes price with zero rates.
#[no_mangle]
pub extern "C" fn kdgm_bs_price(
    spot: f64,
    strike: f64,
    sigma: f64,
    maturity: f64,
    kind: KdgmOptionKind,
) -> f64 {
    oracles::bs_price(spot, strike, sigma, maturity, kind.into())
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// excluding the terminator.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn kdgm_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}
