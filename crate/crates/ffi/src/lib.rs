//! C interface to the online drift-aware GP model.
//!
//! Every function returns a [`DriftGpStatus`]. On failure a message is kept per thread
//! and can be read with [`driftgp_last_error`]. Matrices are dense, row-major,
//! `n` rows by `d` columns. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use driftgp::drift::{DriftKind, KpiKind};
use driftgp::error::Error;
use driftgp::inducing::Decay;
use driftgp::kernel::KernelFamily;
use driftgp::model::{DaoModel, InitialKernel, ModelConfig, StepReport};
use nalgebra::{DMatrix, DVector};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DriftGpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Validation = 3,
    Numerical = 4,
    State = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DriftGpKernel {
    Auto = 0,
    Rbf = 1,
    Matern52 = 2,
    RationalQuadratic = 3,
    Polynomial = 4,
    Periodic = 5,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DriftGpKpi {
    R2 = 0,
    Mse = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DriftGpVerdict {
    None = 0,
    Incremental = 1,
    Abrupt = 2,
}

/// Model settings. Start from [`driftgp_config_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftGpConfig {
    pub max_inducing: usize,
    /// Decay rate per batch; ignored unless `decay_enabled`.
    pub gamma: f64,
    pub decay_enabled: bool,
    pub initial_kernel: DriftGpKernel,
    pub ik_threshold: f64,
    pub uncertainty_threshold: f64,
    pub zeta: f64,
    pub rho: f64,
    pub kpi: DriftGpKpi,
    /// KPI window capacity; 0 selects the lower window bound.
    pub window_capacity: usize,
    pub val_fraction: f64,
}

/// Outcome of one update. `r2` is NaN when undefined for the batch.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftGpStepReport {
    pub batch_index: u64,
    pub mse: f64,
    pub r2: f64,
    pub verdict: DriftGpVerdict,
    pub hyperopt_ran: bool,
    pub kernel_switched: bool,
    pub active_kernel: DriftGpKernel,
    pub inducing_count: usize,
    pub absorbed_count: usize,
}

/// Opaque model handle.
pub struct DriftGpModel {
    inner: DaoModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> DriftGpStatus {
    match e {
        Error::Input(_) | Error::Parse { .. } | Error::Io { .. } => DriftGpStatus::InvalidInput,
        Error::Validation(_) => DriftGpStatus::Validation,
        Error::Numerical(_) | Error::Stability { .. } | Error::UndefinedVariance => DriftGpStatus::Numerical,
        Error::State(_) | Error::Uninitialized | Error::InsufficientHistory { .. } => DriftGpStatus::State,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DriftGpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DriftGpStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            DriftGpStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            DriftGpStatus::Panic
        }
    }
}

fn family_of(k: KernelFamily) -> DriftGpKernel {
    match k {
        KernelFamily::RbfArd => DriftGpKernel::Rbf,
        KernelFamily::Matern52Ard => DriftGpKernel::Matern52,
        KernelFamily::RationalQuadratic => DriftGpKernel::RationalQuadratic,
        KernelFamily::Polynomial => DriftGpKernel::Polynomial,
        KernelFamily::Periodic => DriftGpKernel::Periodic,
    }
}

fn initial_of(k: DriftGpKernel) -> InitialKernel {
    match k {
        DriftGpKernel::Auto => InitialKernel::Auto,
        DriftGpKernel::Rbf => InitialKernel::Named(KernelFamily::RbfArd),
        DriftGpKernel::Matern52 => InitialKernel::Named(KernelFamily::Matern52Ard),
        DriftGpKernel::RationalQuadratic => InitialKernel::Named(KernelFamily::RationalQuadratic),
        DriftGpKernel::Polynomial => InitialKernel::Named(KernelFamily::Polynomial),
        DriftGpKernel::Periodic => InitialKernel::Named(KernelFamily::Periodic),
    }
}

impl DriftGpConfig {
    fn to_model(self) -> ModelConfig {
        ModelConfig {
            max_inducing: self.max_inducing,
            decay: if self.decay_enabled { Decay::Rate(self.gamma) } else { Decay::Off },
            initial_kernel: initial_of(self.initial_kernel),
            ik_threshold: self.ik_threshold,
            uncertainty_threshold: self.uncertainty_threshold,
            zeta: self.zeta,
            rho: self.rho,
            kpi: match self.kpi {
                DriftGpKpi::R2 => KpiKind::R2,
                DriftGpKpi::Mse => KpiKind::Mse,
            },
            window_capacity: (self.window_capacity > 0).then_some(self.window_capacity),
            val_fraction: self.val_fraction,
            ..ModelConfig::default()
        }
    }
}

impl From<&StepReport> for DriftGpStepReport {
    fn from(r: &StepReport) -> Self {
        let kernel = r.active_kernel.parse::<KernelFamily>().map(family_of).unwrap_or(DriftGpKernel::Auto);
        Self {
            batch_index: r.batch_index,
            mse: r.mse,
            r2: r.r2.unwrap_or(f64::NAN),
            verdict: match r.verdict {
                DriftKind::None => DriftGpVerdict::None,
                DriftKind::Incremental => DriftGpVerdict::Incremental,
                DriftKind::Abrupt => DriftGpVerdict::Abrupt,
            },
            hyperopt_ran: r.hyperopt_ran,
            kernel_switched: r.kernel_switched,
            active_kernel: kernel,
            inducing_count: r.inducing_count,
            absorbed_count: r.absorbed_count,
        }
    }
}

/// Copies a row-major `n × d` buffer. `n == 0` accepts a null pointer.
unsafe fn matrix(ptr: *const f64, n: usize, d: usize, what: &'static str) -> Result<DMatrix<f64>, Failure> {
    if d == 0 {
        return Err(Error::Input(format!("{what}: zero columns")).into());
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, d));
    }
    if ptr.is_null() {
        return Err(Failure::Null(what));
    }
    let len = n.checked_mul(d).ok_or_else(|| Error::Input(format!("{what}: size overflow")))?;
    // SAFETY: caller guarantees `ptr` addresses `n * d` readable values.
    let data = unsafe { std::slice::from_raw_parts(ptr, len) };
    Ok(DMatrix::from_row_slice(n, d, data))
}

unsafe fn vector(ptr: *const f64, n: usize, what: &'static str) -> Result<DVector<f64>, Failure> {
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    if ptr.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: caller guarantees `ptr` addresses `n` readable values.
    Ok(DVector::from_column_slice(unsafe { std::slice::from_raw_parts(ptr, n) }))
}

unsafe fn model_mut<'a>(m: *mut DriftGpModel) -> Result<&'a mut DriftGpModel, Failure> {
    // SAFETY: non-null handles come from `driftgp_model_new` and are not aliased.
    unsafe { m.as_mut() }.ok_or(Failure::Null("model"))
}

/// Defaults: 100 inducing points, decay 0.99, RBF, R² KPI, ρ 0.006, ζ 0.005.
#[no_mangle]
pub extern "C" fn driftgp_config_default() -> DriftGpConfig {
    let m = ModelConfig::default();
    DriftGpConfig {
        max_inducing: m.max_inducing,
        gamma: m.decay.rate(),
        decay_enabled: !matches!(m.decay, Decay::Off),
        initial_kernel: match m.initial_kernel {
            InitialKernel::Auto => DriftGpKernel::Auto,
            InitialKernel::Named(k) => family_of(k),
        },
        ik_threshold: m.ik_threshold,
        uncertainty_threshold: m.uncertainty_threshold,
        zeta: m.zeta,
        rho: m.rho,
        kpi: DriftGpKpi::R2,
        window_capacity: 0,
        val_fraction: m.val_fraction,
    }
}

/// Fits a model on an initial batch of `n` rows. `config` may be null for defaults.
/// On success `*out` owns the model; release it with [`driftgp_model_free`].
///
/// # Safety
/// `x` must address `n * d` values, `y` `n` values, and `out` one writable pointer.
#[no_mangle]
pub unsafe extern "C" fn driftgp_model_new(
    config: *const DriftGpConfig,
    x: *const f64,
    y: *const f64,
    n: usize,
    d: usize,
    out: *mut *mut DriftGpModel,
) -> DriftGpStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        // SAFETY: `config` is null or points to a valid config.
        let cfg = unsafe { config.as_ref() }.copied().unwrap_or_else(|| driftgp_config_default());
        let mut model_cfg = cfg.to_model();
        model_cfg.initial_batch_size = n.max(2);
        let x = unsafe { matrix(x, n, d, "x") }?;
        let y = unsafe { vector(y, n, "y") }?;
        let inner = DaoModel::init(model_cfg, &x, &y)?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(DriftGpModel { inner })) };
        Ok(())
    })
}

/// Processes one mini-batch. On failure the model is left as it was.
///
/// # Safety
/// `model` must be a live handle; `x` must address `n * d` values and `y` `n` values.
/// `report` may be null.
#[no_mangle]
pub unsafe extern "C" fn driftgp_model_update(
    model: *mut DriftGpModel,
    x: *const f64,
    y: *const f64,
    n: usize,
    d: usize,
    report: *mut DriftGpStepReport,
) -> DriftGpStatus {
    guard(|| {
        let m = unsafe { model_mut(model) }?;
        let x = unsafe { matrix(x, n, d, "x") }?;
        let y = unsafe { vector(y, n, "y") }?;
        let r = m.inner.update(&x, &y)?;
        // SAFETY: `report` is null or writable.
        if let Some(slot) = unsafe { report.as_mut() } {
            *slot = DriftGpStepReport::from(&r);
        }
        Ok(())
    })
}

/// Posterior mean and latent (noise-free) variance at `n` query rows. `variance` may be null.
///
/// # Safety
/// `model` must be a live handle; `x` must address `n * d` values; `mean` (and
/// `variance` when non-null) must have room for `n` values.
#[no_mangle]
pub unsafe extern "C" fn driftgp_model_predict(
    model: *const DriftGpModel,
    x: *const f64,
    n: usize,
    d: usize,
    mean: *mut f64,
    variance: *mut f64,
) -> DriftGpStatus {
    guard(|| {
        // SAFETY: non-null handles come from `driftgp_model_new`.
        let m = unsafe { model.as_ref() }.ok_or(Failure::Null("model"))?;
        let x = unsafe { matrix(x, n, d, "x") }?;
        if n > 0 && mean.is_null() {
            return Err(Failure::Null("mean"));
        }
        let post = m.inner.predict(&x)?;
        if n > 0 {
            // SAFETY: caller guarantees room for `n` values.
            unsafe { ptr::copy_nonoverlapping(post.mean.as_ptr(), mean, n) };
            if !variance.is_null() {
                unsafe { ptr::copy_nonoverlapping(post.variance.as_ptr(), variance, n) };
            }
        }
        Ok(())
    })
}

/// Number of retained inducing points, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn driftgp_model_inducing_count(model: *const DriftGpModel) -> usize {
    // SAFETY: see above.
    unsafe { model.as_ref() }.map_or(0, |m| m.inner.inducing_count())
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn driftgp_model_free(model: *mut DriftGpModel) {
    if !model.is_null() {
        // SAFETY: the handle was produced by `Box::into_raw`.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Message of the most recent failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn driftgp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
