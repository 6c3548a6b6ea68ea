//! Drift-aware online GP: uncertainty-gated absorption, KPI drift monitoring,
//! drift-triggered hyperparameter refits and kernel re-selection, inducing budget.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::drift::{self, DriftKind, DriftVerdict, KpiKind, KpiWindow, DEFAULT_WINDOW_BOUNDS};
use crate::error::{Error, Result};
use crate::gp::{GpState, Posterior};
use crate::inducing::{select_inducing, Decay};
use crate::kernel::{Hyperparams, KernelFamily, KernelSpec};
use crate::optim::{self, LbfgsbSettings};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKernel {
    /// Pool argmax, no incumbent.
    Auto,
    Named(KernelFamily),
}

impl FromStr for InitialKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            Ok(InitialKernel::Auto)
        } else {
            s.parse().map(InitialKernel::Named)
        }
    }
}

impl fmt::Display for InitialKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialKernel::Auto => f.write_str("auto"),
            InitialKernel::Named(k) => f.write_str(k.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub max_inducing: usize,
    pub decay: Decay,
    pub initial_kernel: InitialKernel,
    /// Additive KPI tolerance within which the incumbent kernel is kept.
    pub ik_threshold: f64,
    pub kernel_pool: Vec<KernelFamily>,
    /// Latent posterior variance above which a training instance is absorbed.
    pub uncertainty_threshold: f64,
    pub zeta: f64,
    pub initial_batch_size: usize,
    pub rho: f64,
    pub kpi: KpiKind,
    pub window_bounds: (usize, usize),
    /// KPI window capacity; `None` uses the lower window bound.
    pub window_capacity: Option<usize>,
    pub val_fraction: f64,
    pub optimizer: LbfgsbSettings,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            max_inducing: 100,
            decay: Decay::Rate(0.99),
            initial_kernel: InitialKernel::Named(KernelFamily::RbfArd),
            ik_threshold: 0.01,
            kernel_pool: KernelFamily::ALL.to_vec(),
            uncertainty_threshold: 0.001,
            zeta: 0.005,
            initial_batch_size: 100,
            rho: 0.006,
            kpi: KpiKind::R2,
            window_bounds: DEFAULT_WINDOW_BOUNDS,
            window_capacity: None,
            val_fraction: 0.2,
            optimizer: LbfgsbSettings::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64, name: &str| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Validation(format!("{name} must be a finite value ≥ 0, got {v}")))
            }
        };
        nonneg(self.ik_threshold, "ik_threshold")?;
        nonneg(self.uncertainty_threshold, "uncertainty_threshold")?;
        nonneg(self.zeta, "zeta")?;
        nonneg(self.decay.rate(), "gamma")?;
        if self.max_inducing < 2 {
            return Err(Error::Validation("max_inducing must be at least 2".into()));
        }
        if self.initial_batch_size < 2 {
            return Err(Error::Validation("initial_batch_size must be at least 2".into()));
        }
        if self.kernel_pool.is_empty() {
            return Err(Error::Validation("kernel pool is empty".into()));
        }
        if !(self.rho > 0.0 && self.rho < 0.5) {
            return Err(Error::Validation(format!("rho must lie in (0, 0.5), got {}", self.rho)));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Validation(format!("val_fraction must lie in (0, 1), got {}", self.val_fraction)));
        }
        let (lb, ub) = self.window_bounds;
        if lb < 2 || ub < lb {
            return Err(Error::Validation(format!("window bounds ({lb}, {ub}) must satisfy 2 ≤ LB ≤ UB")));
        }
        if let Some(c) = self.window_capacity {
            if c < lb || c > ub {
                return Err(Error::Validation(format!("window capacity {c} outside [{lb}, {ub}]")));
            }
        }
        Ok(())
    }

    pub fn capacity(&self) -> usize {
        self.window_capacity.unwrap_or(self.window_bounds.0)
    }
}

/// A mini-batch split into its leading training rows and trailing validation rows.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchSplit {
    pub x_train: DMatrix<f64>,
    pub y_train: DVector<f64>,
    pub x_val: DMatrix<f64>,
    pub y_val: DVector<f64>,
}

/// Temporal split: the first `⌈(1 − val_fraction)·n⌉` rows train, the rest validate.
/// When nothing is left for validation the training rows double as validation.
pub fn split_batch(x: &DMatrix<f64>, y: &DVector<f64>, val_fraction: f64) -> Result<BatchSplit> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::input("empty batch"));
    }
    if y.len() != n {
        return Err(Error::input(format!("batch has {n} rows of X but {} targets", y.len())));
    }
    let n_train = (((1.0 - val_fraction) * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    let x_train = x.rows(0, n_train).into_owned();
    let y_train = y.rows(0, n_train).into_owned();
    if n_train == n {
        return Ok(BatchSplit { x_val: x_train.clone(), y_val: y_train.clone(), x_train, y_train });
    }
    Ok(BatchSplit {
        x_train,
        y_train,
        x_val: x.rows(n_train, n - n_train).into_owned(),
        y_val: y.rows(n_train, n - n_train).into_owned(),
    })
}

/// Validation metrics; `r2` is absent when the targets are constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub mse: f64,
    pub r2: Option<f64>,
}

impl Metrics {
    pub fn kpi(&self, kind: KpiKind) -> Option<f64> {
        match kind {
            KpiKind::Mse => Some(self.mse),
            KpiKind::R2 => self.r2,
        }
    }
}

pub fn evaluate(state: &GpState, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Metrics> {
    let post = state.posterior(x)?;
    let pred = post.mean.as_slice();
    let mse = drift::kpi_mse(y.as_slice(), pred)?;
    if !mse.is_finite() {
        return Err(Error::numerical("non-finite validation error"));
    }
    let r2 = match drift::kpi_r2(y.as_slice(), pred) {
        Ok(v) => Some(v),
        Err(Error::UndefinedVariance) => None,
        Err(e) => return Err(e),
    };
    Ok(Metrics { mse, r2 })
}

/// Outcome of a pool evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelChoice {
    pub spec: KernelSpec,
    pub params: Hyperparams,
    pub metrics: Metrics,
    /// Validation metrics of every candidate that fitted, in evaluation order.
    pub scores: Vec<(KernelFamily, Metrics)>,
}

/// Fits every pool kernel on the training rows and scores it on the validation rows.
/// The incumbent `current`, if any, is kept unless the best candidate beats it by more
/// than `ik_threshold` KPI units.
pub fn pick_best_kernel(
    x_tr: &DMatrix<f64>,
    y_tr: &DVector<f64>,
    x_vl: &DMatrix<f64>,
    y_vl: &DVector<f64>,
    current: Option<(&KernelSpec, &Hyperparams)>,
    config: &ModelConfig,
) -> Result<KernelChoice> {
    if x_tr.nrows() < 2 {
        return Err(Error::input("kernel selection needs at least 2 training points"));
    }
    let d = x_tr.ncols();
    let mut families = config.kernel_pool.clone();
    if let Some((spec, _)) = current {
        if !families.contains(&spec.family()) {
            families.push(spec.family());
        }
    }

    let t = vec![0; x_tr.nrows()];
    let mut fitted: Vec<(KernelSpec, Hyperparams, Metrics)> = Vec::new();
    let mut last_err = None;
    for family in families {
        let spec = match current {
            Some((c, _)) if c.family() == family => c.clone(),
            _ => KernelSpec::new(family, d)?,
        };
        let start = match current {
            Some((c, p)) if c.family() == family => p.clone(),
            _ => spec.initial_params(),
        };
        let attempt = optim::fit_hyperparams(&spec, &start, x_tr, y_tr, &config.optimizer).and_then(|(params, _)| {
            let state = GpState::new(spec.clone(), params.clone(), x_tr.clone(), y_tr.clone(), t.clone())?;
            evaluate(&state, x_vl, y_vl).map(|m| (params, m))
        });
        match attempt {
            Ok((params, m)) => fitted.push((spec, params, m)),
            Err(e) if e.is_numerical() => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    if fitted.is_empty() {
        return Err(Error::numerical(format!(
            "every pool kernel failed to fit{}",
            last_err.map(|e| format!(": {e}")).unwrap_or_default()
        )));
    }

    // R² is undefined for every candidate at once (it depends on the targets only),
    // in which case candidates are ranked by MSE.
    let rank = if fitted.iter().all(|f| f.2.kpi(config.kpi).is_some()) { config.kpi } else { KpiKind::Mse };
    let score = |m: &Metrics| m.kpi(rank).expect("rank KPI is defined");
    let mut best = 0;
    for i in 1..fitted.len() {
        if rank.advantage(score(&fitted[i].2), score(&fitted[best].2)) > 0.0 {
            best = i;
        }
    }
    let mut winner = best;
    if let Some((c, _)) = current {
        if let Some(ci) = fitted.iter().position(|f| f.0.family() == c.family()) {
            if rank.advantage(score(&fitted[best].2), score(&fitted[ci].2)) <= config.ik_threshold {
                winner = ci;
            }
        }
    }
    let scores = fitted.iter().map(|f| (f.0.family(), f.2)).collect();
    let (spec, params, metrics) = fitted.swap_remove(winner);
    Ok(KernelChoice { spec, params, metrics, scores })
}

/// Telemetry for one processed mini-batch.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepReport {
    pub batch_index: u64,
    pub mse: f64,
    pub r2: Option<f64>,
    /// Verdict of the first classification, before any adaptation.
    pub verdict: DriftKind,
    /// Full first classification; absent while the window is too short or the KPI undefined.
    pub detail: Option<DriftVerdict>,
    pub hyperopt_ran: bool,
    pub kernel_switched: bool,
    pub active_kernel: &'static str,
    pub inducing_count: usize,
    pub absorbed_count: usize,
    pub step_micros: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DaoModel {
    config: ModelConfig,
    state: GpState,
    window: KpiWindow,
    batch: u64,
}

fn check_batch(x: &DMatrix<f64>, y: &DVector<f64>, dim: Option<usize>) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::input("empty batch"));
    }
    if x.nrows() != y.len() {
        return Err(Error::input(format!("batch has {} rows of X but {} targets", x.nrows(), y.len())));
    }
    if let Some(d) = dim {
        if x.ncols() != d {
            return Err(Error::input(format!("expected {d} input columns, got {}", x.ncols())));
        }
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::input("batch contains non-finite values"));
    }
    Ok(())
}

impl DaoModel {
    /// Selects the initial kernel on the base batch, builds the GP on its training rows
    /// and seeds the KPI window with the base validation KPI.
    pub fn init(config: ModelConfig, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        config.validate()?;
        check_batch(x, y, None)?;
        if x.nrows() < config.initial_batch_size {
            return Err(Error::input(format!(
                "base batch has {} rows, initial_batch_size is {}",
                x.nrows(),
                config.initial_batch_size
            )));
        }
        let split = split_batch(x, y, config.val_fraction)?;
        let incumbent = match config.initial_kernel {
            InitialKernel::Auto => None,
            InitialKernel::Named(f) => {
                let spec = KernelSpec::new(f, x.ncols())?;
                let p = spec.initial_params();
                Some((spec, p))
            }
        };
        let choice = pick_best_kernel(
            &split.x_train,
            &split.y_train,
            &split.x_val,
            &split.y_val,
            incumbent.as_ref().map(|(s, p)| (s, p)),
            &config,
        )?;
        let n = split.x_train.nrows();
        let mut state = GpState::new(choice.spec, choice.params, split.x_train, split.y_train, vec![0; n])?;
        state = select_inducing(&state, config.max_inducing, config.decay, 0)?;
        let mut window = KpiWindow::new(config.capacity())?;
        if let Some(v) = choice.metrics.kpi(config.kpi) {
            window.push(v);
        }
        Ok(Self { config, state, window, batch: 0 })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn state(&self) -> &GpState {
        &self.state
    }

    pub fn window(&self) -> &KpiWindow {
        &self.window
    }

    /// Number of increments processed so far.
    pub fn batches(&self) -> u64 {
        self.batch
    }

    pub fn inducing_count(&self) -> usize {
        self.state.len()
    }

    pub fn active_kernel(&self) -> KernelFamily {
        self.state.spec().family()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Posterior> {
        self.state.posterior(x)
    }

    /// Processes one increment. On error the model is left exactly as before the call.
    pub fn update(&mut self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<StepReport> {
        check_batch(x, y, Some(self.state.spec().input_dim()))?;
        let started = Instant::now();
        let snapshot = (self.state.clone(), self.window.clone());
        match self.step(x, y) {
            Ok(mut report) => {
                report.step_micros = started.elapsed().as_micros() as u64;
                Ok(report)
            }
            Err(e) => {
                (self.state, self.window) = snapshot;
                Err(e)
            }
        }
    }

    fn step(&mut self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<StepReport> {
        let batch = self.batch + 1;
        let cfg = &self.config;
        let split = split_batch(x, y, cfg.val_fraction)?;

        let mut absorbed = 0;
        for i in 0..split.x_train.nrows() {
            let p: Vec<f64> = split.x_train.row(i).iter().copied().collect();
            if self.state.latent_variance_at(&p)? > cfg.uncertainty_threshold {
                self.state.absorb(&p, split.y_train[i], batch)?;
                absorbed += 1;
            }
        }
        self.state.ensure_inverse()?;

        let mut metrics = evaluate(&self.state, &split.x_val, &split.y_val)?;
        let mut detail = None;
        let mut hyperopt_ran = false;
        let mut kernel_switched = false;

        if let Some(inst) = metrics.kpi(cfg.kpi) {
            let limits = if self.window.len() >= 2 { Some(drift::measure(&self.window, cfg.rho)?) } else { None };
            self.window.push(inst);
            if let Some(limits) = limits {
                let first = drift::classify(inst, &limits, cfg.zeta, cfg.kpi);
                detail = Some(first);
                if first.kind.is_drift() {
                    self.window.remove_last()?;
                    let (params, _) = optim::optimize_hparams(&self.state, &cfg.optimizer)?;
                    self.state = self.state.with_params(params)?;
                    hyperopt_ran = true;
                    metrics = evaluate(&self.state, &split.x_val, &split.y_val)?;
                    let refit = metrics.kpi(cfg.kpi).ok_or(Error::UndefinedVariance)?;
                    self.window.push(refit);

                    // Only an abrupt verdict that survives re-optimization swaps kernels.
                    let second = drift::classify(refit, &limits, cfg.zeta, cfg.kpi).kind;
                    if first.kind == DriftKind::Abrupt && second == DriftKind::Abrupt {
                        self.window.remove_last()?;
                        let choice = pick_best_kernel(
                            self.state.x(),
                            self.state.y(),
                            &split.x_val,
                            &split.y_val,
                            Some((self.state.spec(), self.state.params())),
                            cfg,
                        )?;
                        kernel_switched = choice.spec.family() != self.state.spec().family();
                        self.state = self.state.with_kernel(choice.spec, choice.params)?;
                        metrics = choice.metrics;
                        self.window.push(metrics.kpi(cfg.kpi).ok_or(Error::UndefinedVariance)?);
                    }
                }
            }
        }

        self.state = select_inducing(&self.state, cfg.max_inducing, cfg.decay, batch)?;
        self.state.ensure_inverse()?;
        self.batch = batch;

        Ok(StepReport {
            batch_index: batch,
            mse: metrics.mse,
            r2: metrics.r2,
            verdict: detail.map_or(DriftKind::None, |v| v.kind),
            detail,
            hyperopt_ran,
            kernel_switched,
            active_kernel: self.state.spec().name(),
            inducing_count: self.state.len(),
            absorbed_count: absorbed,
            step_micros: 0,
        })
    }
}
