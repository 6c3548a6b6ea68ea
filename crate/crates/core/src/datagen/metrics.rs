//! Two-sample distribution-shift metrics and per-concept drift certification.

use serde::Serialize;

use super::Stream;
use crate::error::{Error, Result};

const JS_BINS: usize = 64;
const JS_SMOOTHING: f64 = 1e-10;
/// Significance level for the per-feature KS flag.
pub const KS_ALPHA: f64 = 0.05;

fn sorted(a: &[f64]) -> Vec<f64> {
    let mut v = a.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a − F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let (a, b) = (sorted(a), sorted(b));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Kolmogorov distribution tail `Q(λ) = 2 Σ (−1)^{k−1} exp(−2k²λ²)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    let a2 = -2.0 * lambda * lambda;
    let mut fac = 2.0;
    let mut sum = 0.0;
    let mut prev = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = fac * (a2 * kf * kf).exp();
        sum += term;
        if term.abs() <= 1e-3 * prev || term.abs() <= 1e-8 * sum {
            return sum.clamp(0.0, 1.0);
        }
        fac = -fac;
        prev = term.abs();
    }
    // The series does not converge for tiny λ, where the tail is 1.
    1.0
}

/// Asymptotic two-sample KS p-value with the small-sample λ correction.
pub fn ks_pvalue(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::input("KS test needs at least 2 values per sample"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let en = (na * nb / (na + nb)).sqrt();
    let d = ks_statistic(a, b);
    Ok(kolmogorov_q((en + 0.12 + 0.11 / en) * d))
}

fn non_empty(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("samples must be non-empty"));
    }
    Ok(())
}

/// Jensen–Shannon divergence (base 2) of 64-bin histograms over the pooled range.
pub fn js_divergence(a: &[f64], b: &[f64]) -> Result<f64> {
    non_empty(a, b)?;
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    let width = hi - lo;
    let hist = |s: &[f64]| {
        let mut h = [0.0f64; JS_BINS];
        for &v in s {
            let k = if width > 0.0 { (((v - lo) / width) * JS_BINS as f64) as usize } else { 0 };
            h[k.min(JS_BINS - 1)] += 1.0;
        }
        // Additive (Lidstone) smoothing on the counts.
        let total = s.len() as f64 + JS_SMOOTHING * JS_BINS as f64;
        h.map(|c| (c + JS_SMOOTHING) / total)
    };
    let (p, q) = (hist(a), hist(b));
    let mut js = 0.0;
    for k in 0..JS_BINS {
        let m = 0.5 * (p[k] + q[k]);
        js += 0.5 * p[k] * (p[k] / m).log2() + 0.5 * q[k] * (q[k] / m).log2();
    }
    Ok(js.clamp(0.0, 1.0))
}

/// Empirical 1-Wasserstein distance divided by the pooled sample range.
pub fn wasserstein_norm(a: &[f64], b: &[f64]) -> Result<f64> {
    non_empty(a, b)?;
    let (a, b) = (sorted(a), sorted(b));
    let range = a[a.len() - 1].max(b[b.len() - 1]) - a[0].min(b[0]);
    if range <= 0.0 {
        return Ok(0.0);
    }
    let mut all: Vec<f64> = a.iter().chain(&b).copied().collect();
    all.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut w = 0.0;
    for k in 0..all.len() - 1 {
        while i < a.len() && a[i] <= all[k] {
            i += 1;
        }
        while j < b.len() && b[j] <= all[k] {
            j += 1;
        }
        w += (i as f64 / na - j as f64 / nb).abs() * (all[k + 1] - all[k]);
    }
    Ok((w / range).clamp(0.0, 1.0))
}

/// Shift metrics between two consecutive concepts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairReport {
    pub from: usize,
    pub to: usize,
    pub y_ks_pvalue: f64,
    pub y_js: f64,
    pub y_wasserstein: f64,
    pub x_any_ks_sig: bool,
    pub x_min_ks_pvalue: f64,
    pub x_avg_js: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CertifyReport {
    /// False when the stream holds fewer than two concepts.
    pub applicable: bool,
    pub pairs: Vec<PairReport>,
}

/// Certifies the shift between each pair of consecutive concept ids.
pub fn certify(stream: &Stream) -> Result<CertifyReport> {
    let ids = stream.concept.as_ref().ok_or_else(|| Error::input("stream has no concept_id column"))?;
    let mut concepts: Vec<usize> = ids.clone();
    concepts.sort_unstable();
    concepts.dedup();
    if concepts.len() < 2 {
        return Ok(CertifyReport { applicable: false, pairs: Vec::new() });
    }
    let rows = |c: usize| -> Vec<usize> { (0..ids.len()).filter(|&i| ids[i] == c).collect() };
    let mut pairs = Vec::new();
    for w in concepts.windows(2) {
        let (ra, rb) = (rows(w[0]), rows(w[1]));
        let ya: Vec<f64> = ra.iter().map(|&i| stream.y[i]).collect();
        let yb: Vec<f64> = rb.iter().map(|&i| stream.y[i]).collect();
        let mut min_p = 1.0f64;
        let mut js_sum = 0.0;
        for j in 0..stream.dims() {
            let xa: Vec<f64> = ra.iter().map(|&i| stream.x[(i, j)]).collect();
            let xb: Vec<f64> = rb.iter().map(|&i| stream.x[(i, j)]).collect();
            min_p = min_p.min(ks_pvalue(&xa, &xb)?);
            js_sum += js_divergence(&xa, &xb)?;
        }
        pairs.push(PairReport {
            from: w[0],
            to: w[1],
            y_ks_pvalue: ks_pvalue(&ya, &yb)?,
            y_js: js_divergence(&ya, &yb)?,
            y_wasserstein: wasserstein_norm(&ya, &yb)?,
            x_any_ks_sig: min_p < KS_ALPHA,
            x_min_ks_pvalue: min_p,
            x_avg_js: js_sum / stream.dims() as f64,
        });
    }
    Ok(CertifyReport { applicable: true, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn uniform(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(lo..hi)).collect()
    }

    fn normal(n: usize, shift: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                shift + z
            })
            .collect()
    }

    #[test]
    fn ks_cases() {
        let a = uniform(200, 0.0, 1.0, 1);
        assert!(ks_pvalue(&a, &a).unwrap() >= 0.99);
        let lo = uniform(1000, 0.0, 1.0, 2);
        let hi = uniform(1000, 2.0, 3.0, 3);
        assert_eq!(ks_statistic(&lo, &hi), 1.0);
        assert!(ks_pvalue(&lo, &hi).unwrap() <= 1e-6);
        assert!(ks_pvalue(&normal(500, 0.0, 4), &normal(500, 3.0, 5)).unwrap() <= 1e-4);
        assert!(ks_pvalue(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ks_statistic_with_ties() {
        assert_eq!(ks_statistic(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]), 1.0 / 3.0);
        assert_eq!(ks_statistic(&[0.0, 1.0], &[0.0, 1.0]), 0.0);
    }

    #[test]
    fn kolmogorov_tail_reference() {
        // Q(1) and Q(0.5) of the Kolmogorov distribution.
        assert!((kolmogorov_q(1.0) - 0.26999967167735456).abs() < 1e-9);
        assert!((kolmogorov_q(0.5) - 0.9639452436648751).abs() < 1e-6);
    }

    #[test]
    fn js_cases() {
        let a = uniform(300, 0.0, 1.0, 6);
        assert_eq!(js_divergence(&a, &a).unwrap(), 0.0);
        let b = uniform(300, 5.0, 6.0, 7);
        // Only the smoothing floor separates these from 1 and 0.
        assert!((js_divergence(&a, &b).unwrap() - 1.0).abs() < 1e-9);
        assert!(js_divergence(&[2.0, 2.0], &[2.0]).unwrap() < 1e-9);
        assert!(js_divergence(&[], &[1.0]).is_err());
    }

    #[test]
    fn wasserstein_cases() {
        let a = uniform(300, 0.0, 1.0, 8);
        assert_eq!(wasserstein_norm(&a, &a).unwrap(), 0.0);
        assert_eq!(wasserstein_norm(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(wasserstein_norm(&[3.0], &[3.0, 3.0]).unwrap(), 0.0);
        let u = uniform(1000, 0.0, 1.0, 9);
        let v = uniform(1000, 0.5, 1.5, 10);
        let w = wasserstein_norm(&u, &v).unwrap();
        assert!((w - 0.5 / 1.5).abs() <= 0.03, "{w}");
    }

    /// W₁ between equal-size samples is the mean gap between order statistics.
    #[test]
    fn wasserstein_matches_quantile_oracle() {
        let u = uniform(400, -1.0, 2.0, 11);
        let v: Vec<f64> = normal(400, 0.3, 12);
        let (su, sv) = (sorted(&u), sorted(&v));
        let w1: f64 = su.iter().zip(&sv).map(|(a, b)| (a - b).abs()).sum::<f64>() / 400.0;
        let range = su[399].max(sv[399]) - su[0].min(sv[0]);
        assert!((wasserstein_norm(&u, &v).unwrap() - w1 / range).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn metrics_symmetric_and_order_free(
            a in prop::collection::vec(-5.0f64..5.0, 2..40),
            b in prop::collection::vec(-5.0f64..5.0, 2..40),
        ) {
            let mut ar = a.clone();
            ar.reverse();
            prop_assert_eq!(ks_pvalue(&a, &b).unwrap(), ks_pvalue(&b, &a).unwrap());
            prop_assert_eq!(ks_pvalue(&a, &b).unwrap(), ks_pvalue(&ar, &b).unwrap());
            prop_assert!((js_divergence(&a, &b).unwrap() - js_divergence(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert_eq!(js_divergence(&a, &b).unwrap(), js_divergence(&ar, &b).unwrap());
            prop_assert!((wasserstein_norm(&a, &b).unwrap() - wasserstein_norm(&b, &a).unwrap()).abs() < 1e-12);
            prop_assert_eq!(wasserstein_norm(&a, &b).unwrap(), wasserstein_norm(&ar, &b).unwrap());
            let js = js_divergence(&a, &b).unwrap();
            prop_assert!((0.0..=1.0).contains(&js));
        }
    }
}
