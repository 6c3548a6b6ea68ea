use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

pub(crate) const JITTER_START: f64 = 1e-10;
pub(crate) const JITTER_MAX: f64 = 1e-4;
/// Largest tolerated `‖K·K⁻¹ − I‖_max` for a maintained inverse.
pub const INVERSE_RESIDUAL_TOL: f64 = 1e-6;

pub(crate) struct Factor {
    pub chol: Cholesky<f64, Dyn>,
}

fn with_jitter(a: &DMatrix<f64>, jitter: f64) -> DMatrix<f64> {
    let mut m = a.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += jitter;
    }
    m
}

/// Jitter ladder: none, then 1e-10 growing ×10 up to 1e-4.
fn jitter_ladder() -> impl Iterator<Item = f64> {
    std::iter::once(0.0).chain(
        std::iter::successors(Some(JITTER_START), |j| Some(j * 10.0))
            .take_while(|&j| j <= JITTER_MAX * (1.0 + 1e-9)),
    )
}

/// Cholesky factorization escalating the diagonal jitter until it succeeds.
pub(crate) fn cholesky_jittered(a: &DMatrix<f64>) -> Result<Factor> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("matrix contains non-finite entries"));
    }
    for jitter in jitter_ladder() {
        if let Some(chol) = with_jitter(a, jitter).cholesky() {
            if chol.l_dirty().diagonal().iter().all(|&d| d > 0.0 && d.is_finite()) {
                return Ok(Factor { chol });
            }
        }
    }
    Err(Error::numerical(format!(
        "Cholesky failed even with jitter {JITTER_MAX:e}"
    )))
}

/// Inverse of an SPD matrix via Cholesky with escalating jitter. Returns the
/// jittered matrix actually inverted, its inverse, and the jitter used. A
/// candidate is accepted only if its residual is within [`INVERSE_RESIDUAL_TOL`].
pub(crate) fn spd_inverse(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("matrix contains non-finite entries"));
    }
    for jitter in jitter_ladder() {
        let m = with_jitter(a, jitter);
        let Some(chol) = m.clone().cholesky() else {
            continue;
        };
        let mut inv = chol.inverse();
        symmetrize(&mut inv);
        if inverse_residual(&m, &inv) <= INVERSE_RESIDUAL_TOL {
            return Ok((m, inv, jitter));
        }
    }
    Err(Error::numerical(format!(
        "matrix still singular at jitter {JITTER_MAX:e}"
    )))
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `‖A·B − I‖_max`.
pub fn inverse_residual(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let prod = a * b;
    let mut worst = 0.0f64;
    for j in 0..prod.ncols() {
        for i in 0..prod.nrows() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((prod[(i, j)] - target).abs());
        }
    }
    worst
}

pub(crate) fn log_det(factor: &Factor) -> f64 {
    2.0 * factor.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}
