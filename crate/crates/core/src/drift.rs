//! KPI window, adaptive thresholds and drift-severity classification.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scaling factor between batches-per-stream and KPI window capacity.
pub const WINDOW_SCALE: f64 = 0.05;
pub const DEFAULT_WINDOW_BOUNDS: (usize, usize) = (10, 50);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    HigherBetter,
    LowerBetter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KpiKind {
    #[serde(rename = "r2")]
    R2,
    #[serde(rename = "mse")]
    Mse,
}

impl KpiKind {
    pub fn orientation(self) -> Orientation {
        match self {
            KpiKind::R2 => Orientation::HigherBetter,
            KpiKind::Mse => Orientation::LowerBetter,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KpiKind::R2 => "r2",
            KpiKind::Mse => "mse",
        }
    }

    /// Signed improvement of `a` over `b`: positive when `a` is better.
    pub fn advantage(self, a: f64, b: f64) -> f64 {
        match self.orientation() {
            Orientation::HigherBetter => a - b,
            Orientation::LowerBetter => b - a,
        }
    }

    pub fn compute(self, y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
        match self {
            KpiKind::R2 => kpi_r2(y_true, y_pred),
            KpiKind::Mse => kpi_mse(y_true, y_pred),
        }
    }
}

impl fmt::Display for KpiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KpiKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "r2" | "r-squared" => Ok(KpiKind::R2),
            "mse" => Ok(KpiKind::Mse),
            other => Err(Error::input(format!("unknown KPI `{other}`"))),
        }
    }
}

/// KPI window capacity for `recent_points` observations arriving in batches of
/// `batch_size`, clamped into `[lb, ub]`.
pub fn window_capacity(recent_points: usize, batch_size: usize, lb: usize, ub: usize) -> usize {
    let raw = (recent_points as f64 / batch_size.max(1) as f64 * WINDOW_SCALE).round() as usize;
    raw.clamp(lb, ub.max(lb))
}

fn check_pair(y_true: &[f64], y_pred: &[f64]) -> Result<()> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(Error::input(format!(
            "KPI needs equal non-empty lengths, got {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    Ok(())
}

pub fn kpi_mse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    let sse: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sse / y_true.len() as f64)
}

pub fn kpi_r2(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    let mean = y_true.iter().sum::<f64>() / y_true.len() as f64;
    let sst: f64 = y_true.iter().map(|a| (a - mean) * (a - mean)).sum();
    if sst == 0.0 {
        return Err(Error::UndefinedVariance);
    }
    let sse: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - sse / sst)
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile: Acklam's rational approximation polished by one Newton step.
pub fn inv_norm_cdf(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::input(format!("probability {p} outside (0, 1)")));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    let tail = |q: f64| {
        let q = (-2.0 * q.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let x = if p < P_LOW {
        tail(p)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail(1.0 - p)
    };
    let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    Ok(x - (norm_cdf(x) - p) / density)
}

/// Bounded FIFO of per-batch KPI values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KpiWindow {
    values: VecDeque<f64>,
    capacity: usize,
}

impl KpiWindow {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::input("KPI window capacity must be positive"));
        }
        Ok(Self { values: VecDeque::with_capacity(capacity), capacity })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().copied()
    }

    /// Appends `value`, evicting the oldest entry when full.
    pub fn push(&mut self, value: f64) {
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(value);
    }

    /// Drops the most recently appended entry.
    pub fn remove_last(&mut self) -> Result<f64> {
        self.values
            .pop_back()
            .ok_or_else(|| Error::State("remove_last on an empty KPI window".into()))
    }
}

/// Baseline statistics and control limits derived from a KPI window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KpiLimits {
    pub mu: f64,
    pub sigma: f64,
    pub tau: f64,
    pub low: f64,
    pub high: f64,
}

impl KpiLimits {
    pub fn new(mu: f64, sigma: f64, tau: f64) -> Self {
        Self { mu, sigma, tau, low: mu - tau, high: mu + tau }
    }
}

/// Sample mean, sample standard deviation (n − 1) and the `z(ρ)·σ` threshold over
/// every entry of `window`. The caller measures before appending the instant KPI,
/// so the window holds baseline entries only.
pub fn measure(window: &KpiWindow, rho: f64) -> Result<KpiLimits> {
    let n = window.len();
    if n < 2 {
        return Err(Error::InsufficientHistory { have: n });
    }
    let z = inv_norm_cdf(1.0 - rho)?;
    let mu = window.values().sum::<f64>() / n as f64;
    let var = window.values().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (n - 1) as f64;
    let sigma = var.sqrt();
    Ok(KpiLimits::new(mu, sigma, z * sigma))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftKind {
    None,
    Incremental,
    Abrupt,
}

impl DriftKind {
    pub fn name(self) -> &'static str {
        match self {
            DriftKind::None => "none",
            DriftKind::Incremental => "incremental",
            DriftKind::Abrupt => "abrupt",
        }
    }

    pub fn is_drift(self) -> bool {
        self != DriftKind::None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DriftVerdict {
    pub kind: DriftKind,
    /// Drift magnitude `|μ − inst|`.
    pub dm: f64,
    pub mu: f64,
    pub sigma: f64,
    pub tau: f64,
    pub low: f64,
    pub high: f64,
}

/// Classifies the instant KPI against baseline limits. Deviations on the favorable
/// side, or within the safe area `zeta`, are not drift; beyond that, deviations up to
/// `tau` are incremental and larger ones abrupt.
pub fn classify(inst: f64, limits: &KpiLimits, zeta: f64, kpi: KpiKind) -> DriftVerdict {
    let dm = (limits.mu - inst).abs();
    let favorable = match kpi.orientation() {
        Orientation::HigherBetter => inst >= limits.mu,
        Orientation::LowerBetter => inst <= limits.mu,
    };
    let kind = if favorable || dm <= zeta {
        DriftKind::None
    } else if dm <= limits.tau {
        DriftKind::Incremental
    } else {
        DriftKind::Abrupt
    };
    DriftVerdict {
        kind,
        dm,
        mu: limits.mu,
        sigma: limits.sigma,
        tau: limits.tau,
        low: limits.low,
        high: limits.high,
    }
}
