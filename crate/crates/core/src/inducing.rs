//! Decay-weighted scoring and top-M selection of inducing points.
//!
//! Each base point gets `score_i = w_i · σ²_i`, with `w_i = exp(−γ·Δt_i)` measured
//! in batches and `σ²_i` the self-prediction variance of point i under the
//! decay-adjusted Gram `D^½ K D^½`. Points that are old, redundant, or both
//! score low and are dropped first.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gp::GpState;
use crate::linalg;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "gamma")]
pub enum Decay {
    /// Every weight is 1.
    Off,
    /// Exponential decay with the given rate per batch.
    Rate(f64),
}

impl Decay {
    pub fn rate(self) -> f64 {
        match self {
            Decay::Off => 0.0,
            Decay::Rate(g) => g,
        }
    }
}

/// `w_i = exp(−γ·(t_now − t_i))`, floored at the smallest positive normal so that
/// very old points keep a strictly positive weight.
pub fn decay_weights(decay: Decay, t_base: &[u64], t_now: u64) -> Vec<f64> {
    let gamma = decay.rate();
    t_base
        .iter()
        .map(|&t| {
            if gamma == 0.0 {
                return 1.0;
            }
            let dt = t_now.saturating_sub(t) as f64;
            (-gamma * dt).exp().max(f64::MIN_POSITIVE)
        })
        .collect()
}

/// `K_dec[i, j] = √w_i · K[i, j] · √w_j`.
pub fn decayed_kernel(k: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let s: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| s[i] * k[(i, j)] * s[j])
}

/// Decay-weighted uncertainty scores of every base point.
pub fn score_points(state: &GpState, w: &[f64]) -> Result<Vec<f64>> {
    let m = state.len();
    let noise = state.params().noise_variance();
    // Noise-free Gram recovered from the maintained noise-inclusive (and jittered) one.
    let mut k_free = state.gram().clone();
    for i in 0..m {
        k_free[(i, i)] -= noise + state.jitter();
    }
    let k_dec = decayed_kernel(&k_free, w);
    let mut a = k_dec.clone();
    for i in 0..m {
        a[(i, i)] += noise;
    }
    let factor = linalg::cholesky_jittered(&a)?;
    let v = factor
        .chol
        .l()
        .solve_lower_triangular(&k_dec)
        .expect("Cholesky factor has a positive diagonal");
    Ok((0..m)
        .map(|i| {
            let var = k_dec[(i, i)] - v.column(i).norm_squared();
            w[i] * var.max(0.0)
        })
        .collect())
}

/// Indices of the `k` best scores; ties prefer newer timestamps, then lower index.
pub(crate) fn top_scores(scores: &[f64], t: &[u64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(t[b].cmp(&t[a]))
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Keeps at most `max_inducing` base points, the highest-scoring ones, and rebuilds
/// the inverse on the kept set. A base set already within budget is returned as is.
pub fn select_inducing(state: &GpState, max_inducing: usize, decay: Decay, t_now: u64) -> Result<GpState> {
    if state.len() <= max_inducing {
        return Ok(state.clone());
    }
    let w = decay_weights(decay, state.timestamps(), t_now);
    let scores = score_points(state, &w)?;
    let keep = top_scores(&scores, state.timestamps(), max_inducing);
    state.subset(&keep)
}
