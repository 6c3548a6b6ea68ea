//! Exact GP posterior over a base set with an explicitly maintained inverse Gram.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernel::{Hyperparams, KernelSpec};
use crate::linalg::{self, INVERSE_RESIDUAL_TOL};

/// Smallest admissible Schur complement in a rank-one expansion.
pub const STABILITY_EPS: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
}

/// Base training set, active kernel and the noise-inclusive Gram with its inverse.
///
/// `k` is the matrix that `k_inv` inverts, including any factorization jitter.
#[derive(Clone, Debug, PartialEq)]
pub struct GpState {
    x: DMatrix<f64>,
    y: DVector<f64>,
    t: Vec<u64>,
    spec: KernelSpec,
    params: Hyperparams,
    k: DMatrix<f64>,
    k_inv: DMatrix<f64>,
    jitter: f64,
}

/// How a point entered the base set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AbsorbPath {
    RankOne,
    Refreshed,
}

impl GpState {
    /// Builds a state and computes its inverse from scratch. An empty base set is allowed
    /// and yields an uninitialized state.
    pub fn new(
        spec: KernelSpec,
        params: Hyperparams,
        x: DMatrix<f64>,
        y: DVector<f64>,
        t: Vec<u64>,
    ) -> Result<Self> {
        spec.validate(&params)?;
        if x.ncols() != spec.input_dim() {
            return Err(Error::input(format!(
                "expected {} input columns, got {}",
                spec.input_dim(),
                x.ncols()
            )));
        }
        if x.nrows() != y.len() || y.len() != t.len() {
            return Err(Error::input("X, y and t must have the same number of rows"));
        }
        let mut state = Self {
            k: DMatrix::zeros(0, 0),
            k_inv: DMatrix::zeros(0, 0),
            jitter: 0.0,
            x,
            y,
            t,
            spec,
            params,
        };
        if state.len() > 0 {
            state.refresh()?;
        }
        Ok(state)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn timestamps(&self) -> &[u64] {
        &self.t
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn params(&self) -> &Hyperparams {
        &self.params
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn gram_inverse(&self) -> &DMatrix<f64> {
        &self.k_inv
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `‖K·K⁻¹ − I‖_max` of the maintained pair.
    pub fn inverse_residual(&self) -> f64 {
        linalg::inverse_residual(&self.k, &self.k_inv)
    }

    /// Recomputes `K` and `K⁻¹` from the base set, returning a new state.
    pub fn refresh_inverse(&self) -> Result<Self> {
        let mut next = self.clone();
        next.refresh()?;
        Ok(next)
    }

    pub(crate) fn refresh(&mut self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Uninitialized);
        }
        let gram = self.spec.gram_unchecked(&self.params, &self.x);
        let (k, k_inv, jitter) = linalg::spd_inverse(&gram)?;
        self.k = k;
        self.k_inv = k_inv;
        self.jitter = jitter;
        Ok(())
    }

    /// Refreshes only when the maintained inverse has drifted past tolerance.
    pub(crate) fn ensure_inverse(&mut self) -> Result<()> {
        if !self.is_empty() && !(self.inverse_residual() <= INVERSE_RESIDUAL_TOL) {
            self.refresh()?;
        }
        Ok(())
    }

    /// Same base set under different hyperparameters.
    pub fn with_params(&self, params: Hyperparams) -> Result<Self> {
        Self::new(self.spec.clone(), params, self.x.clone(), self.y.clone(), self.t.clone())
    }

    /// Same base set under a different kernel.
    pub fn with_kernel(&self, spec: KernelSpec, params: Hyperparams) -> Result<Self> {
        Self::new(spec, params, self.x.clone(), self.y.clone(), self.t.clone())
    }

    /// Keeps the rows at `indices` (in the given order) and recomputes the inverse.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let x = self.x.select_rows(indices);
        let y = DVector::from_iterator(indices.len(), indices.iter().map(|&i| self.y[i]));
        let t = indices.iter().map(|&i| self.t[i]).collect();
        Self::new(self.spec.clone(), self.params.clone(), x, y, t)
    }

    fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Cross-covariance between the base set and one point.
    fn k_vec(&self, point: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.len(), (0..self.len()).map(|i| self.spec.eval(&self.params, &self.row(i), point)))
    }

    /// Latent (noise-free) posterior variance at a single point.
    pub fn latent_variance_at(&self, point: &[f64]) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::Uninitialized);
        }
        let kv = self.k_vec(point);
        let a = &self.k_inv * &kv;
        let v = self.spec.eval(&self.params, point, point) - kv.dot(&a);
        Ok(v.max(0.0))
    }

    /// Posterior mean and diagonal variance at the rows of `x_query`.
    pub fn posterior(&self, x_query: &DMatrix<f64>) -> Result<Posterior> {
        if self.is_empty() {
            return Err(Error::Uninitialized);
        }
        if x_query.ncols() != self.spec.input_dim() {
            return Err(Error::input(format!(
                "expected {} query columns, got {}",
                self.spec.input_dim(),
                x_query.ncols()
            )));
        }
        let ks = self.spec.cross_unchecked(&self.params, &self.x, x_query);
        let alpha = &self.k_inv * &self.y;
        let mean = ks.tr_mul(&alpha);
        let v = &self.k_inv * &ks;
        let variance = DVector::from_iterator(
            x_query.nrows(),
            (0..x_query.nrows()).map(|j| {
                let q: Vec<f64> = x_query.row(j).iter().copied().collect();
                let kss = self.spec.eval(&self.params, &q, &q);
                let var = kss - ks.column(j).dot(&v.column(j));
                var.max(0.0)
            }),
        );
        Ok(Posterior { mean, variance })
    }

    /// Appends one observation, expanding `K⁻¹` by the rank-one identity. When the
    /// update is unstable the inverse is recomputed from scratch instead.
    pub fn absorb(&mut self, point: &[f64], y: f64, t: u64) -> Result<AbsorbPath> {
        if point.len() != self.spec.input_dim() {
            return Err(Error::input("point dimension mismatch"));
        }
        let m = self.len();
        let kv = if m > 0 { self.k_vec(point) } else { DVector::zeros(0) };
        let c = self.spec.eval(&self.params, point, point) + self.params.noise_variance() + self.jitter;

        self.x = self.x.clone().insert_row(m, 0.0);
        self.x.row_mut(m).copy_from_slice(point);
        self.y = self.y.clone().push(y);
        self.t.push(t);

        if m == 0 {
            self.refresh()?;
            return Ok(AbsorbPath::Refreshed);
        }

        match woodbury_expand(&self.k_inv, &kv, c) {
            Ok(inv) => {
                let mut k = self.k.clone().insert_row(m, 0.0).insert_column(m, 0.0);
                for i in 0..m {
                    k[(i, m)] = kv[i];
                    k[(m, i)] = kv[i];
                }
                k[(m, m)] = c;
                self.k = k;
                self.k_inv = inv;
                Ok(AbsorbPath::RankOne)
            }
            Err(Error::Stability { .. }) => {
                self.refresh()?;
                Ok(AbsorbPath::Refreshed)
            }
            Err(e) => Err(e),
        }
    }

    /// Approximate heap footprint of the numeric state in bytes.
    pub fn footprint_bytes(&self) -> usize {
        let f = std::mem::size_of::<f64>();
        (self.x.len() + self.y.len() + self.k.len() + self.k_inv.len() + self.params.len()) * f
            + self.t.len() * std::mem::size_of::<u64>()
    }
}

/// Inverse of the Gram matrix augmented by one row/column, from the current inverse.
///
/// `k_vec` is the covariance between the base set and the new point and `c` its
/// noise-inclusive self covariance.
pub fn woodbury_expand(k_inv: &DMatrix<f64>, k_vec: &DVector<f64>, c: f64) -> Result<DMatrix<f64>> {
    let m = k_inv.nrows();
    if k_inv.ncols() != m || k_vec.len() != m {
        return Err(Error::input("woodbury_expand: dimension mismatch"));
    }
    let a = k_inv * k_vec;
    let denom = c - k_vec.dot(&a);
    if !(denom > STABILITY_EPS) {
        return Err(Error::Stability { denominator: denom });
    }
    let beta = 1.0 / denom;
    let mut out = DMatrix::zeros(m + 1, m + 1);
    for j in 0..m {
        for i in 0..m {
            out[(i, j)] = k_inv[(i, j)] + beta * a[i] * a[j];
        }
        out[(m, j)] = -beta * a[j];
        out[(j, m)] = -beta * a[j];
    }
    out[(m, m)] = beta;
    Ok(out)
}

/// Negative log marginal likelihood of `y` under the kernel and noise in `params`.
pub fn nlml(spec: &KernelSpec, params: &Hyperparams, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::input("nlml needs at least one observation"));
    }
    if x.nrows() != y.len() {
        return Err(Error::input("X and y row counts differ"));
    }
    spec.gram(params, x).map(|_| ())?;
    nlml_unchecked(spec, params, x, y)
}

pub(crate) fn nlml_unchecked(
    spec: &KernelSpec,
    params: &Hyperparams,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<f64> {
    let gram = spec.gram_unchecked(params, x);
    let factor = linalg::cholesky_jittered(&gram)?;
    let alpha = factor.chol.solve(y);
    let n = y.len() as f64;
    let value = 0.5 * y.dot(&alpha)
        + 0.5 * linalg::log_det(&factor)
        + 0.5 * n * (2.0 * std::f64::consts::PI).ln();
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::numerical("non-finite NLML"))
    }
}
