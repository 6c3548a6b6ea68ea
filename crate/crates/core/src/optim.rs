//! Box-constrained limited-memory BFGS and NLML hyperparameter fitting.
//!
//! The minimizer follows L-BFGS-B semantics: variables sitting on a bound with the
//! gradient pushing outward are held fixed, the quasi-Newton direction is built on
//! the remaining free variables, and every trial point is projected back onto the
//! box. Accepted iterates therefore always satisfy the bounds exactly, and an
//! Armijo backtracking search guarantees the objective never increases.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gp::{self, GpState};
use crate::kernel::{Hyperparams, KernelSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::input("bound vectors differ in length"));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::Validation(format!("bound {i}: need finite lower < upper, got [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| v >= l && v <= u)
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    GradientTol,
    FunctionTol,
    MaxIter,
    LineSearchFail,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptimResult {
    pub x_star: Vec<f64>,
    pub f_star: f64,
    pub f_initial: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Objective value of every accepted iterate, starting with `x0`.
    pub trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsbSettings {
    /// Number of stored correction pairs.
    pub memory: usize,
    /// Max-norm tolerance on the projected gradient.
    pub pgtol: f64,
    /// Relative tolerance on the per-iteration decrease.
    pub ftol: f64,
    /// Objective evaluations, finite-difference probes included.
    pub budget: usize,
    pub fd_step: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsbSettings {
    fn default() -> Self {
        Self {
            memory: 10,
            pgtol: 1e-5,
            ftol: 1e-9,
            budget: 200,
            fd_step: 1e-6,
            max_line_search: 20,
        }
    }
}

impl LbfgsbSettings {
    /// Evaluations a run may spend beyond `budget`: one finite-difference gradient
    /// computed after the last accepted step.
    pub fn evaluation_slack(&self, dim: usize) -> usize {
        2 * dim
    }
}

/// Source of gradients for [`minimize_bounded`].
pub enum Gradient<'a> {
    /// Central differences with [`LbfgsbSettings::fd_step`].
    FiniteDifference,
    Analytic(Box<dyn FnMut(&[f64]) -> Vec<f64> + 'a>),
}

struct Counted<F> {
    f: F,
    evals: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn call(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }
}

fn fd_gradient<F: FnMut(&[f64]) -> f64>(f: &mut Counted<F>, x: &[f64], fx: f64, h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let fp = f.call(&probe);
            probe[i] = x[i] - h;
            let fm = f.call(&probe);
            probe[i] = x[i];
            match (fp.is_finite(), fm.is_finite()) {
                (true, true) => (fp - fm) / (2.0 * h),
                (true, false) => (fp - fx) / h,
                (false, true) => (fx - fm) / h,
                (false, false) => 0.0,
            }
        })
        .collect()
}

fn dot_masked(a: &[f64], b: &[f64], free: &[bool]) -> f64 {
    a.iter().zip(b).zip(free).filter(|(_, &f)| f).map(|((x, y), _)| x * y).sum()
}

/// Two-loop recursion restricted to the free variables.
fn lbfgs_direction(g: &[f64], free: &[bool], pairs: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.iter().zip(free).map(|(&v, &f)| if f { v } else { 0.0 }).collect();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y) in pairs.iter().rev() {
        let sy = dot_masked(s, y, free);
        if sy <= 1e-300 {
            alphas.push(0.0);
            continue;
        }
        let a = dot_masked(s, &q, free) / sy;
        for i in 0..q.len() {
            if free[i] {
                q[i] -= a * y[i];
            }
        }
        alphas.push(a);
    }
    let gamma = pairs
        .back()
        .map(|(s, y)| {
            let (sy, yy) = (dot_masked(s, y, free), dot_masked(y, y, free));
            if sy > 0.0 && yy > 0.0 {
                sy / yy
            } else {
                1.0
            }
        })
        .unwrap_or(1.0);
    q.iter_mut().for_each(|v| *v *= gamma);
    for ((s, y), a) in pairs.iter().zip(alphas.iter().rev()) {
        let sy = dot_masked(s, y, free);
        if sy <= 1e-300 {
            continue;
        }
        let b = dot_masked(y, &q, free) / sy;
        for i in 0..q.len() {
            if free[i] {
                q[i] += (a - b) * s[i];
            }
        }
    }
    q.iter().map(|v| -v).collect()
}

/// Minimizes `f` over the box from the feasible start `x0`.
///
/// Line-search failure is reported through [`Termination::LineSearchFail`], not as an
/// error. Objective evaluations stay within `budget` plus
/// [`LbfgsbSettings::evaluation_slack`].
pub fn minimize_bounded<F>(
    f: F,
    mut gradient: Gradient<'_>,
    x0: &[f64],
    bounds: &BoxBounds,
    settings: &LbfgsbSettings,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = bounds.dim();
    if x0.len() != n {
        return Err(Error::input("x0 dimension does not match bounds"));
    }
    if !bounds.contains(x0) {
        return Err(Error::input("x0 lies outside the bounds"));
    }
    let mut f = Counted { f, evals: 0 };
    let mut x = x0.to_vec();
    let mut fx = f.call(&x);
    if !fx.is_finite() {
        return Err(Error::input("objective is not finite at x0"));
    }
    let f_initial = fx;
    let mut grad = |f: &mut Counted<F>, x: &[f64], fx: f64| match &mut gradient {
        Gradient::FiniteDifference => fd_gradient(f, x, fx, settings.fd_step),
        Gradient::Analytic(g) => g(x),
    };
    let mut g = grad(&mut f, &x, fx);
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(settings.memory);
    let mut trace = vec![fx];
    let mut iterations = 0;

    let termination = loop {
        let pg_norm = x
            .iter()
            .zip(&g)
            .enumerate()
            .map(|(i, (&xi, &gi))| ((xi - gi).clamp(bounds.lower[i], bounds.upper[i]) - xi).abs())
            .fold(0.0, f64::max);
        if pg_norm <= settings.pgtol {
            break Termination::GradientTol;
        }
        if f.evals >= settings.budget {
            break Termination::MaxIter;
        }

        let free: Vec<bool> = (0..n)
            .map(|i| {
                let at_lower = x[i] <= bounds.lower[i] && g[i] > 0.0;
                let at_upper = x[i] >= bounds.upper[i] && g[i] < 0.0;
                !(at_lower || at_upper)
            })
            .collect();

        let mut accepted = None;
        let mut out_of_budget = false;
        // First attempt uses the quasi-Newton direction; on failure retry once along
        // the steepest-descent direction with the history cleared.
        for attempt in 0..2 {
            let use_history = attempt == 0 && !pairs.is_empty();
            if attempt == 1 && pairs.is_empty() {
                break;
            }
            let mut d = if use_history {
                lbfgs_direction(&g, &free, &pairs)
            } else {
                g.iter().zip(&free).map(|(&v, &fr)| if fr { -v } else { 0.0 }).collect()
            };
            if dot_masked(&d, &g, &free) >= 0.0 {
                d = g.iter().zip(&free).map(|(&v, &fr)| if fr { -v } else { 0.0 }).collect();
            }
            let mut alpha = if use_history {
                1.0
            } else {
                let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if dmax > 1.0 {
                    1.0 / dmax
                } else {
                    1.0
                }
            };
            for _ in 0..settings.max_line_search {
                if f.evals >= settings.budget {
                    out_of_budget = true;
                    break;
                }
                let mut trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + alpha * di).collect();
                bounds.project(&mut trial);
                let decrease: f64 = trial.iter().zip(&x).zip(&g).map(|((t, xi), gi)| gi * (t - xi)).sum();
                if decrease >= 0.0 {
                    break;
                }
                let ft = f.call(&trial);
                if ft.is_finite() && ft <= fx + 1e-4 * decrease {
                    accepted = Some((trial, ft));
                    break;
                }
                alpha *= 0.5;
            }
            if accepted.is_some() || out_of_budget {
                break;
            }
            pairs.clear();
        }

        let Some((x_new, f_new)) = accepted else {
            break if out_of_budget { Termination::MaxIter } else { Termination::LineSearchFail };
        };
        let g_new = grad(&mut f, &x_new, f_new);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > 1e-10 * yy && sy > 0.0 {
            if pairs.len() == settings.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y));
        }
        let rel = (fx - f_new) / fx.abs().max(f_new.abs()).max(1.0);
        x = x_new;
        fx = f_new;
        g = g_new;
        trace.push(fx);
        iterations += 1;
        if rel <= settings.ftol {
            break Termination::FunctionTol;
        }
    };

    Ok(OptimResult {
        x_star: x,
        f_star: fx,
        f_initial,
        iterations,
        evaluations: f.evals,
        converged: matches!(termination, Termination::GradientTol | Termination::FunctionTol),
        termination,
        trace,
    })
}

/// Search-space box for a kernel spec: log bounds for positive descriptors.
pub fn search_bounds(spec: &KernelSpec) -> BoxBounds {
    let (lower, upper) = spec.all_descriptors().map(|d| d.search_bounds()).unzip();
    BoxBounds::new(lower, upper).expect("descriptor bounds are validated at construction")
}

/// Maps search-space coordinates to hyperparameters without clamping, so that
/// finite-difference probes just outside the box still see a smooth objective.
fn params_from_search_raw(spec: &KernelSpec, u: &[f64]) -> Hyperparams {
    Hyperparams::new(
        spec.all_descriptors()
            .zip(u)
            .map(|(d, &v)| if d.log_scale() { v.exp() } else { v })
            .collect(),
    )
}

pub fn params_to_search(spec: &KernelSpec, params: &Hyperparams) -> Vec<f64> {
    spec.all_descriptors().zip(params.as_slice()).map(|(d, &v)| d.to_search(v)).collect()
}

pub fn params_from_search(spec: &KernelSpec, u: &[f64]) -> Hyperparams {
    Hyperparams::new(spec.all_descriptors().zip(u).map(|(d, &v)| d.from_search(v)).collect())
}

/// NLML as a function of search-space coordinates; infinite where undefined.
pub fn nlml_objective<'a>(
    spec: &'a KernelSpec,
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
) -> impl FnMut(&[f64]) -> f64 + 'a {
    move |u: &[f64]| {
        let p = params_from_search_raw(spec, u);
        gp::nlml_unchecked(spec, &p, x, y).unwrap_or(f64::INFINITY)
    }
}

/// Fits hyperparameters from `start` by minimizing NLML on `(x, y)`. Never returns
/// parameters with a worse NLML than `start`.
pub fn fit_hyperparams(
    spec: &KernelSpec,
    start: &Hyperparams,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    settings: &LbfgsbSettings,
) -> Result<(Hyperparams, OptimResult)> {
    spec.validate(start)?;
    let u0 = params_to_search(spec, start);
    let bounds = search_bounds(spec);
    let mut u0c = u0.clone();
    bounds.project(&mut u0c);

    let soft_failure = |f0: f64| OptimResult {
        x_star: u0c.clone(),
        f_star: f0,
        f_initial: f0,
        iterations: 0,
        evaluations: 1,
        converged: false,
        termination: Termination::LineSearchFail,
        trace: vec![f0],
    };
    let f0 = match gp::nlml(spec, start, x, y) {
        Ok(v) => v,
        Err(e) if e.is_numerical() => return Ok((start.clone(), soft_failure(f64::INFINITY))),
        Err(e) => return Err(e),
    };
    let result = match minimize_bounded(nlml_objective(spec, x, y), Gradient::FiniteDifference, &u0c, &bounds, settings) {
        Ok(r) => r,
        Err(_) => return Ok((start.clone(), soft_failure(f0))),
    };
    let candidate = params_from_search(spec, &result.x_star);
    match gp::nlml(spec, &candidate, x, y) {
        Ok(fc) if fc <= f0 => Ok((candidate, result)),
        _ => Ok((start.clone(), OptimResult { converged: false, ..soft_failure(f0) })),
    }
}

/// Re-optimizes the state's hyperparameters on its base set, warm-started from the
/// current values.
pub fn optimize_hparams(state: &GpState, settings: &LbfgsbSettings) -> Result<(Hyperparams, OptimResult)> {
    if state.len() < 2 {
        return Err(Error::input("hyperparameter optimization needs at least 2 base points"));
    }
    fit_hyperparams(state.spec(), state.params(), state.x(), state.y(), settings)
}
