//! Seeded synthetic regression streams with optional concept drift.
//!
//! Inputs are uniform on `[−3, 3]^d` shifted by the concept's `x_shift`. The target is
//! `amplitude · (f(frequency·x) − m) / s + offset + ε`, where `m` and `s` standardize
//! `f` over the concept's own input distribution.

pub mod metrics;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use metrics::{certify, js_divergence, ks_pvalue, ks_statistic, wasserstein_norm, CertifyReport, PairReport};

const INPUT_HALF_WIDTH: f64 = 3.0;
const STANDARDIZE_SAMPLES: usize = 8192;
const STANDARDIZE_SEED: u64 = 0x5eed_0f_c0_ce_97;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Sinusoidal,
    Quadratic,
    Cubic,
    Exponential,
    Logarithmic,
    Piecewise,
    ParabolicWave,
    GaussianBump,
    DoubleGaussian,
}

impl Family {
    pub const ALL: [Family; 9] = [
        Family::Sinusoidal,
        Family::Quadratic,
        Family::Cubic,
        Family::Exponential,
        Family::Logarithmic,
        Family::Piecewise,
        Family::ParabolicWave,
        Family::GaussianBump,
        Family::DoubleGaussian,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Sinusoidal => "sinusoidal",
            Family::Quadratic => "quadratic",
            Family::Cubic => "cubic",
            Family::Exponential => "exponential",
            Family::Logarithmic => "logarithmic",
            Family::Piecewise => "piecewise",
            Family::ParabolicWave => "parabolic-wave",
            Family::GaussianBump => "gaussian-bump",
            Family::DoubleGaussian => "double-gaussian",
        }
    }

    /// Raw (unstandardized) function value at `u`.
    pub fn raw(self, u: &[f64]) -> f64 {
        let d = u.len() as f64;
        let u1 = u[0];
        match self {
            Family::Sinusoidal => u.iter().map(|v| (2.0 * std::f64::consts::PI * v).sin()).sum::<f64>() / d,
            Family::Quadratic => u.iter().map(|v| v * v).sum::<f64>() / d,
            Family::Cubic => u.iter().map(|v| v * v * v).sum::<f64>() / d,
            Family::Exponential => (u1 / 2.0).exp(),
            Family::Logarithmic => (1.0 + u1.abs() * u.iter().map(|v| v.abs()).sum::<f64>() / d).ln(),
            Family::Piecewise => {
                if u1 < 0.0 {
                    u1
                } else {
                    u1 * u1
                }
            }
            Family::ParabolicWave => u1 * u1 * (2.0 * std::f64::consts::PI * u1).sin(),
            Family::GaussianBump => (-0.5 * u.iter().map(|v| v * v).sum::<f64>()).exp(),
            Family::DoubleGaussian => {
                let bump = |c: f64| {
                    let r2: f64 = u.iter().enumerate().map(|(j, v)| if j == 0 { (v - c).powi(2) } else { v * v }).sum();
                    (-0.5 * r2).exp()
                };
                bump(1.5) + bump(-1.5)
            }
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Family::ALL
            .into_iter()
            .find(|f| f.name() == norm)
            .ok_or_else(|| Error::input(format!("unknown function family `{s}`")))
    }
}

/// Per-concept multipliers and offsets applied to the family's closed form.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Concept {
    pub amplitude: f64,
    pub frequency: f64,
    pub offset: f64,
    /// Added to every input coordinate.
    pub x_shift: f64,
}

impl Default for Concept {
    fn default() -> Self {
        Self { amplitude: 1.0, frequency: 1.0, offset: 0.0, x_shift: 0.0 }
    }
}

impl Concept {
    fn lerp(&self, other: &Concept, a: f64) -> Concept {
        let l = |p: f64, q: f64| p + a * (q - p);
        Concept {
            amplitude: l(self.amplitude, other.amplitude),
            frequency: l(self.frequency, other.frequency),
            offset: l(self.offset, other.offset),
            x_shift: l(self.x_shift, other.x_shift),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = [self.amplitude, self.frequency, self.offset, self.x_shift].iter().all(|v| v.is_finite());
        if !ok || self.frequency == 0.0 {
            return Err(Error::Validation(format!("invalid concept parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriftType {
    Abrupt,
    Incremental,
    Gradual,
}

impl FromStr for DriftType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "abrupt" => Ok(DriftType::Abrupt),
            "incremental" => Ok(DriftType::Incremental),
            "gradual" => Ok(DriftType::Gradual),
            other => Err(Error::input(format!("unknown drift type `{other}`"))),
        }
    }
}

/// `boundaries[j]` is the first index of segment `j + 1`; segment `j` belongs to
/// concept `j`.
///
/// Abrupt drift switches concept at each boundary. Incremental drift interpolates
/// linearly from concept `j − 1` to `j` across segment `j`. Gradual drift draws each
/// point of segment `j` from concept `j` with probability rising from 0 to 1 over the
/// first half of the segment, else from concept `j − 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftSchedule {
    pub kind: DriftType,
    pub concepts: Vec<Concept>,
    pub boundaries: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub family: Family,
    pub n_points: usize,
    pub dims: usize,
    pub noise_sd: f64,
    pub seed: u64,
    /// Concept of a stationary stream; ignored when `drift` is set.
    #[serde(default)]
    pub concept: Concept,
    #[serde(default)]
    pub drift: Option<DriftSchedule>,
}

/// A generated or ingested stream in arrival order.
#[derive(Clone, Debug, PartialEq)]
pub struct Stream {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub t: Vec<u64>,
    pub concept: Option<Vec<usize>>,
}

impl Stream {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.x.ncols()
    }

    /// Rows `start..end` as a new stream.
    pub fn slice(&self, start: usize, end: usize) -> Stream {
        let n = end - start;
        Stream {
            x: self.x.rows(start, n).into_owned(),
            y: self.y.rows(start, n).into_owned(),
            t: self.t[start..end].to_vec(),
            concept: self.concept.as_ref().map(|c| c[start..end].to_vec()),
        }
    }
}

/// Mean and standard deviation of `family` under a concept's input distribution,
/// estimated on a fixed Monte-Carlo sample.
pub fn standardization(family: Family, concept: &Concept, dims: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(STANDARDIZE_SEED);
    let mut u = vec![0.0; dims];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..STANDARDIZE_SAMPLES {
        for v in u.iter_mut() {
            *v = concept.frequency * (rng.random_range(-INPUT_HALF_WIDTH..INPUT_HALF_WIDTH) + concept.x_shift);
        }
        let f = family.raw(&u);
        sum += f;
        sum_sq += f * f;
    }
    let n = STANDARDIZE_SAMPLES as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0);
    let sd = var.sqrt();
    (mean, if sd > 1e-12 { sd } else { 1.0 })
}

/// Noise-free target of a concept at input `x`, given its standardization.
pub fn concept_value(family: Family, concept: &Concept, stdz: (f64, f64), x: &[f64]) -> f64 {
    let u: Vec<f64> = x.iter().map(|v| concept.frequency * v).collect();
    concept.amplitude * (family.raw(&u) - stdz.0) / stdz.1 + concept.offset
}

impl StreamSpec {
    pub fn stationary(family: Family, n_points: usize, dims: usize, noise_sd: f64, seed: u64) -> Self {
        Self { family, n_points, dims, noise_sd, seed, concept: Concept::default(), drift: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points == 0 || self.dims == 0 {
            return Err(Error::Validation("stream needs n_points ≥ 1 and dims ≥ 1".into()));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::Validation(format!("noise_sd must be ≥ 0, got {}", self.noise_sd)));
        }
        self.concept.validate()?;
        if let Some(d) = &self.drift {
            if d.concepts.len() < 2 {
                return Err(Error::Validation("drift schedule needs at least 2 concepts".into()));
            }
            if d.boundaries.len() != d.concepts.len() - 1 {
                return Err(Error::Validation(format!(
                    "{} concepts need {} boundaries, got {}",
                    d.concepts.len(),
                    d.concepts.len() - 1,
                    d.boundaries.len()
                )));
            }
            let mut prev = 0;
            for &b in &d.boundaries {
                if b <= prev || b >= self.n_points {
                    return Err(Error::Validation(format!(
                        "boundaries must be strictly increasing inside (0, {}), got {:?}",
                        self.n_points, d.boundaries
                    )));
                }
                prev = b;
            }
            for c in &d.concepts {
                c.validate()?;
            }
        }
        Ok(())
    }

    pub fn concepts(&self) -> Vec<Concept> {
        match &self.drift {
            Some(d) => d.concepts.clone(),
            None => vec![self.concept],
        }
    }

    /// Deterministic in `seed`.
    pub fn generate(&self) -> Result<Stream> {
        self.validate()?;
        let n = self.n_points;
        let d = self.dims;
        let concepts = self.concepts();
        let stdz: Vec<(f64, f64)> = concepts.iter().map(|c| standardization(self.family, c, d)).collect();
        let bounds: Vec<usize> = match &self.drift {
            Some(s) => std::iter::once(0).chain(s.boundaries.iter().copied()).chain(std::iter::once(n)).collect(),
            None => vec![0, n],
        };
        let kind = self.drift.as_ref().map(|s| s.kind);

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let noise = Normal::new(0.0, self.noise_sd).map_err(|e| Error::Validation(e.to_string()))?;
        let mut x = DMatrix::zeros(n, d);
        let mut y = DVector::zeros(n);
        let mut concept_id = vec![0usize; n];
        let mut seg = 0;
        let mut raw = vec![0.0; d];
        let mut row = vec![0.0; d];
        for i in 0..n {
            while i >= bounds[seg + 1] {
                seg += 1;
            }
            let frac = (i - bounds[seg]) as f64 / (bounds[seg + 1] - bounds[seg]) as f64;
            for v in raw.iter_mut() {
                *v = rng.random_range(-INPUT_HALF_WIDTH..INPUT_HALF_WIDTH);
            }
            let (concept, st, id) = match kind {
                _ if seg == 0 => (concepts[0], stdz[0], 0),
                Some(DriftType::Abrupt) | None => (concepts[seg], stdz[seg], seg),
                Some(DriftType::Incremental) => {
                    let c = concepts[seg - 1].lerp(&concepts[seg], frac);
                    let (a, b) = (stdz[seg - 1], stdz[seg]);
                    (c, (a.0 + frac * (b.0 - a.0), a.1 + frac * (b.1 - a.1)), seg)
                }
                Some(DriftType::Gradual) => {
                    let p_new = (2.0 * frac).min(1.0);
                    let c = if rng.random::<f64>() < p_new { seg } else { seg - 1 };
                    (concepts[c], stdz[c], c)
                }
            };
            for j in 0..d {
                row[j] = raw[j] + concept.x_shift;
                x[(i, j)] = row[j];
            }
            y[i] = concept_value(self.family, &concept, st, &row) + noise.sample(&mut rng);
            concept_id[i] = id;
        }
        Ok(Stream { x, y, t: (0..n as u64).collect(), concept: Some(concept_id) })
    }
}

/// Abrupt swap at mid-stream: a 3-D sinusoidal concept replaced by one with shifted
/// inputs and a raised target level, so inputs and targets barely overlap the first.
pub fn abrupt_swap_spec(seed: u64) -> StreamSpec {
    let first = Concept { amplitude: 1.0, frequency: 0.2, offset: 0.0, x_shift: 0.0 };
    let second = Concept { amplitude: 1.0, frequency: 0.2, offset: 3.0, x_shift: 4.0 };
    StreamSpec {
        family: Family::Sinusoidal,
        n_points: 3000,
        dims: 3,
        noise_sd: 0.1,
        seed,
        concept: first,
        drift: Some(DriftSchedule { kind: DriftType::Abrupt, concepts: vec![first, second], boundaries: vec![1500] }),
    }
}

/// Stationary 2-D sinusoid used for the accuracy check.
pub fn stationary_sine_spec(seed: u64) -> StreamSpec {
    StreamSpec {
        concept: Concept { frequency: 0.25, ..Concept::default() },
        ..StreamSpec::stationary(Family::Sinusoidal, 2000, 2, 0.1, seed)
    }
}
