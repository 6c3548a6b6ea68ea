//! Kernel families, hyperparameter metadata and covariance evaluation.
//!
//! Every family exposes an ordered list of [`HyperparamDescriptor`]s followed by a
//! descriptor for the observation-noise variance. A [`Hyperparams`] vector is laid
//! out in the same order, noise last.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

/// Degree of the polynomial kernel. Fixed so that every descriptor stays continuous.
pub const POLY_DEGREE: i32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    RbfArd,
    Matern52Ard,
    RationalQuadratic,
    Polynomial,
    Periodic,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 5] = [
        KernelFamily::RbfArd,
        KernelFamily::Matern52Ard,
        KernelFamily::RationalQuadratic,
        KernelFamily::Polynomial,
        KernelFamily::Periodic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::RbfArd => "rbf",
            KernelFamily::Matern52Ard => "matern52",
            KernelFamily::RationalQuadratic => "rq",
            KernelFamily::Polynomial => "poly",
            KernelFamily::Periodic => "periodic",
        }
    }

    /// Stationary families have k(x, x) equal to their signal variance.
    pub fn is_stationary(self) -> bool {
        !matches!(self, KernelFamily::Polynomial)
    }

    pub fn is_ard(self) -> bool {
        matches!(self, KernelFamily::RbfArd | KernelFamily::Matern52Ard)
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rbf" | "rbf-ard" | "se" => Ok(KernelFamily::RbfArd),
            "matern52" | "matern" | "matern52-ard" => Ok(KernelFamily::Matern52Ard),
            "rq" | "rational-quadratic" | "rationalquadratic" => Ok(KernelFamily::RationalQuadratic),
            "poly" | "polynomial" => Ok(KernelFamily::Polynomial),
            "periodic" | "exp-sine-squared" => Ok(KernelFamily::Periodic),
            other => Err(Error::input(format!("unknown kernel family `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperparamDescriptor {
    pub name: String,
    pub initial: f64,
    pub lower: f64,
    pub upper: f64,
}

impl HyperparamDescriptor {
    pub fn new(name: impl Into<String>, initial: f64, lower: f64, upper: f64) -> Result<Self> {
        let name = name.into();
        if !(lower.is_finite() && upper.is_finite() && initial.is_finite()) {
            return Err(Error::Validation(format!("{name}: bounds must be finite")));
        }
        if lower >= upper {
            return Err(Error::Validation(format!("{name}: lower {lower} >= upper {upper}")));
        }
        if initial < lower || initial > upper {
            return Err(Error::Validation(format!(
                "{name}: initial {initial} outside [{lower}, {upper}]"
            )));
        }
        Ok(Self { name, initial, lower, upper })
    }

    fn unchecked(name: String, initial: f64, lower: f64, upper: f64) -> Self {
        Self { name, initial, lower, upper }
    }

    /// Strictly positive parameters are searched in log space.
    pub fn log_scale(&self) -> bool {
        self.lower > 0.0
    }

    pub fn to_search(&self, value: f64) -> f64 {
        if self.log_scale() {
            value.ln()
        } else {
            value
        }
    }

    /// Maps a search-space coordinate back, clamped into the box so that
    /// `exp(ln(x))` round-off never leaves the feasible set.
    pub fn from_search(&self, u: f64) -> f64 {
        let v = if self.log_scale() { u.exp() } else { u };
        v.clamp(self.lower, self.upper)
    }

    pub fn search_bounds(&self) -> (f64, f64) {
        (self.to_search(self.lower), self.to_search(self.upper))
    }
}

/// Hyperparameter values aligned with a [`KernelSpec`]'s descriptors, noise variance last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams(Vec<f64>);

impl Hyperparams {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn noise_variance(&self) -> f64 {
        *self.0.last().expect("hyperparameter vector is never empty")
    }

    fn kernel_part(&self) -> &[f64] {
        &self.0[..self.0.len() - 1]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    family: KernelFamily,
    input_dim: usize,
    descriptors: Vec<HyperparamDescriptor>,
    noise: HyperparamDescriptor,
}

impl KernelSpec {
    /// Spec with the documented default descriptors for `family`.
    pub fn new(family: KernelFamily, input_dim: usize) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::input("input_dim must be at least 1"));
        }
        let d = |name: &str, init: f64, lo: f64, hi: f64| {
            HyperparamDescriptor::unchecked(name.to_string(), init, lo, hi)
        };
        let descriptors = match family {
            KernelFamily::RbfArd | KernelFamily::Matern52Ard => {
                let mut v: Vec<_> = (0..input_dim)
                    .map(|j| d(&format!("lengthscale_{j}"), 1.0, 1e-3, 1e3))
                    .collect();
                v.push(d("variance", 1.0, 1e-3, 1e3));
                v
            }
            KernelFamily::RationalQuadratic => vec![
                d("lengthscale", 1.0, 1e-3, 1e3),
                d("alpha", 1.0, 1e-3, 1e3),
                d("variance", 1.0, 1e-3, 1e3),
            ],
            KernelFamily::Polynomial => vec![d("scale", 1.0, 1e-3, 1e3), d("bias", 1.0, 1e-3, 1e3)],
            KernelFamily::Periodic => vec![
                d("period", 1.0, 1e-2, 1e2),
                d("lengthscale", 1.0, 1e-3, 1e3),
                d("variance", 1.0, 1e-3, 1e3),
            ],
        };
        Ok(Self {
            family,
            input_dim,
            descriptors,
            noise: d("noise_variance", 0.1, 1e-6, 1e1),
        })
    }

    /// Spec with caller-supplied descriptors. The count must match the family layout
    /// and names must be unique.
    pub fn with_descriptors(
        family: KernelFamily,
        input_dim: usize,
        descriptors: Vec<HyperparamDescriptor>,
        noise: HyperparamDescriptor,
    ) -> Result<Self> {
        let reference = Self::new(family, input_dim)?;
        if descriptors.len() != reference.descriptors.len() {
            return Err(Error::Validation(format!(
                "{family} expects {} kernel descriptors, got {}",
                reference.descriptors.len(),
                descriptors.len()
            )));
        }
        for desc in descriptors.iter().chain(std::iter::once(&noise)) {
            HyperparamDescriptor::new(desc.name.clone(), desc.initial, desc.lower, desc.upper)?;
        }
        let mut names: Vec<&str> = descriptors.iter().map(|d| d.name.as_str()).collect();
        names.push(&noise.name);
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation("descriptor names must be unique".into()));
        }
        Ok(Self { family, input_dim, descriptors, noise })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn name(&self) -> &'static str {
        self.family.name()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn descriptors(&self) -> &[HyperparamDescriptor] {
        &self.descriptors
    }

    pub fn noise_descriptor(&self) -> &HyperparamDescriptor {
        &self.noise
    }

    /// Kernel descriptors followed by the noise descriptor.
    pub fn all_descriptors(&self) -> impl Iterator<Item = &HyperparamDescriptor> {
        self.descriptors.iter().chain(std::iter::once(&self.noise))
    }

    pub fn n_params(&self) -> usize {
        self.descriptors.len() + 1
    }

    pub fn initial_params(&self) -> Hyperparams {
        Hyperparams(self.all_descriptors().map(|d| d.initial).collect())
    }

    pub fn validate(&self, params: &Hyperparams) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::Validation(format!(
                "{} expects {} hyperparameters, got {}",
                self.family,
                self.n_params(),
                params.len()
            )));
        }
        for (desc, &v) in self.all_descriptors().zip(params.as_slice()) {
            if !(v >= desc.lower && v <= desc.upper) {
                return Err(Error::Validation(format!(
                    "{} = {v} outside [{}, {}]",
                    desc.name, desc.lower, desc.upper
                )));
            }
        }
        Ok(())
    }

    /// k(x, x) for stationary families.
    pub fn signal_variance(&self, params: &Hyperparams) -> Option<f64> {
        self.family.is_stationary().then(|| params.kernel_part()[self.descriptors.len() - 1])
    }

    fn check_inputs(&self, params: &Hyperparams, mats: &[&DMatrix<f64>]) -> Result<()> {
        for m in mats {
            if m.ncols() != self.input_dim {
                return Err(Error::input(format!(
                    "expected {} input columns, got {}",
                    self.input_dim,
                    m.ncols()
                )));
            }
        }
        self.validate(params)
    }

    /// Covariance between two single points.
    pub fn eval(&self, params: &Hyperparams, a: &[f64], b: &[f64]) -> f64 {
        kernel_value(self.family, params.kernel_part(), a, b)
    }

    /// Cross-covariance matrix with entry (i, j) = k(A_i, B_j).
    pub fn eval_cross(
        &self,
        params: &Hyperparams,
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        self.check_inputs(params, &[a, b])?;
        Ok(self.cross_unchecked(params, a, b))
    }

    pub(crate) fn cross_unchecked(
        &self,
        params: &Hyperparams,
        a: &DMatrix<f64>,
        b: &DMatrix<f64>,
    ) -> DMatrix<f64> {
        let d = self.input_dim;
        let at = a.transpose();
        let bt = b.transpose();
        let (ra, rb) = (at.as_slice(), bt.as_slice());
        let p = params.kernel_part();
        DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| {
            kernel_value(self.family, p, &ra[i * d..(i + 1) * d], &rb[j * d..(j + 1) * d])
        })
    }

    /// Noise-free covariance of `x` with itself, exactly symmetric.
    pub(crate) fn self_cov_unchecked(&self, params: &Hyperparams, x: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.input_dim;
        let n = x.nrows();
        let xt = x.transpose();
        let rows = xt.as_slice();
        let p = params.kernel_part();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..=j {
                let v = kernel_value(self.family, p, &rows[i * d..(i + 1) * d], &rows[j * d..(j + 1) * d]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }

    /// Noise-inclusive Gram matrix `K(X, X) + σ_n² I`.
    pub fn gram(&self, params: &Hyperparams, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_inputs(params, &[x])?;
        Ok(self.gram_unchecked(params, x))
    }

    pub(crate) fn gram_unchecked(&self, params: &Hyperparams, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut k = self.self_cov_unchecked(params, x);
        let noise = params.noise_variance();
        for i in 0..k.nrows() {
            k[(i, i)] += noise;
        }
        k
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn scaled_sq_dist(a: &[f64], b: &[f64], lengthscales: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(lengthscales)
        .map(|((x, y), l)| {
            let t = (x - y) / l;
            t * t
        })
        .sum()
}

fn kernel_value(family: KernelFamily, p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    match family {
        KernelFamily::RbfArd => {
            let d = a.len();
            p[d] * (-0.5 * scaled_sq_dist(a, b, &p[..d])).exp()
        }
        KernelFamily::Matern52Ard => {
            let d = a.len();
            let r = scaled_sq_dist(a, b, &p[..d]).sqrt();
            let s = SQRT5 * r;
            p[d] * (1.0 + s + s * s / 3.0) * (-s).exp()
        }
        KernelFamily::RationalQuadratic => {
            let (ls, alpha, var) = (p[0], p[1], p[2]);
            var * (1.0 + sq_dist(a, b) / (2.0 * alpha * ls * ls)).powf(-alpha)
        }
        KernelFamily::Polynomial => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (p[0] * dot + p[1]).powi(POLY_DEGREE)
        }
        KernelFamily::Periodic => {
            // Product of one-dimensional periodic kernels, positive definite in any dimension.
            let (period, ls, var) = (p[0], p[1], p[2]);
            let s2: f64 = a
                .iter()
                .zip(b)
                .map(|(x, y)| {
                    let s = (std::f64::consts::PI * (x - y) / period).sin();
                    s * s
                })
                .sum();
            var * (-2.0 * s2 / (ls * ls)).exp()
        }
    }
}

/// The full five-family pool with default descriptors.
pub fn default_pool(input_dim: usize) -> Result<Vec<KernelSpec>> {
    KernelFamily::ALL.iter().map(|&f| KernelSpec::new(f, input_dim)).collect()
}
