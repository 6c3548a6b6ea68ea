//! Experiment configuration: a TOML file with dotted sections, overridden by
//! `DRIFTGP_SEED` and then by command-line flags.
//!
//! ```toml
//! seed = 7
//!
//! [model]
//! max_inducing = 100
//! gamma = 0.99            # or "off"
//! initial_kernel = "rbf"  # or "auto"
//! kernel_pool = ["rbf", "matern52", "rq", "poly", "periodic"]
//! ik_threshold = 0.01
//! uncertainty_threshold = 0.001
//! zeta = 0.005
//! rho = 0.006
//! kpi = "r2"
//! window_lb = 10
//! window_ub = 50
//! val_fraction = 0.2
//!
//! [batch]
//! initial = 100
//! increment = 10
//!
//! [stream]
//! family = "sinusoidal"
//! n_points = 2000
//! dims = 2
//! noise_sd = 0.1
//! concept = { frequency = 0.25 }
//!
//! [output]
//! telemetry = "telemetry.jsonl"
//! summary = "summary.json"
//! timing = false
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::datagen::{self, Concept, DriftSchedule, Family, StreamSpec};
use crate::drift::{window_capacity, KpiKind};
use crate::error::{Error, Result};
use crate::inducing::Decay;
use crate::kernel::KernelFamily;
use crate::model::{InitialKernel, ModelConfig};

pub const SEED_ENV: &str = "DRIFTGP_SEED";
/// Trailing share of the stream held out for the final evaluation.
pub const TEST_FRACTION: f64 = 0.2;
pub const DEFAULT_INCREMENT: usize = 10;

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum GammaSetting {
    Rate(f64),
    Word(String),
}

impl GammaSetting {
    pub fn to_decay(&self) -> Result<Decay> {
        match self {
            GammaSetting::Rate(g) => Ok(Decay::Rate(*g)),
            GammaSetting::Word(w) if w.eq_ignore_ascii_case("off") => Ok(Decay::Off),
            GammaSetting::Word(w) => w
                .parse::<f64>()
                .map(Decay::Rate)
                .map_err(|_| Error::Validation(format!("gamma must be a rate or \"off\", got `{w}`"))),
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub max_inducing: Option<usize>,
    pub gamma: Option<GammaSetting>,
    pub initial_kernel: Option<String>,
    pub kernel_pool: Option<Vec<String>>,
    pub ik_threshold: Option<f64>,
    pub uncertainty_threshold: Option<f64>,
    pub zeta: Option<f64>,
    pub rho: Option<f64>,
    pub kpi: Option<String>,
    pub window_lb: Option<usize>,
    pub window_ub: Option<usize>,
    pub window_capacity: Option<usize>,
    pub val_fraction: Option<f64>,
    pub optimizer_budget: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSection {
    pub initial: Option<usize>,
    pub increment: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSection {
    /// CSV file to replay instead of generating.
    pub input: Option<PathBuf>,
    /// `stationary-sine` or `abrupt-swap`.
    pub preset: Option<String>,
    pub family: Option<String>,
    pub n_points: Option<usize>,
    pub dims: Option<usize>,
    pub noise_sd: Option<f64>,
    pub concept: Option<Concept>,
    pub drift: Option<DriftSchedule>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub telemetry: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub timing: Option<bool>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub batch: BatchSection,
    #[serde(default)]
    pub stream: StreamSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::parse(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }
}

/// Command-line overrides; flags mirror the algorithm's input names.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_inducing: Option<usize>,
    pub gamma: Option<String>,
    pub rho: Option<f64>,
    pub zeta: Option<f64>,
    pub uncertainty_threshold: Option<f64>,
    pub ik_threshold: Option<f64>,
    pub kpi: Option<String>,
    pub initial_kernel: Option<String>,
    pub initial_batch: Option<usize>,
    pub increment: Option<usize>,
    pub input: Option<PathBuf>,
    pub telemetry: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    pub timing: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StreamSource {
    Generate(StreamSpec),
    Csv(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub source: StreamSource,
    pub increment: usize,
    pub seed: u64,
    pub telemetry: Option<PathBuf>,
    pub summary: Option<PathBuf>,
    /// Record wall-clock step times in telemetry; off keeps telemetry reproducible.
    pub timing: bool,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Validation(format!("{SEED_ENV} must be an unsigned integer, got `{v}`"))),
        Err(_) => Ok(None),
    }
}

/// Stream generated from a `[stream]` section: the preset, then the section's overrides.
pub fn stream_spec(section: &StreamSection, seed: u64) -> Result<StreamSpec> {
    let mut spec = match section.preset.as_deref() {
        None | Some("stationary-sine") => datagen::stationary_sine_spec(seed),
        Some("abrupt-swap") => datagen::abrupt_swap_spec(seed),
        Some(other) => return Err(Error::Validation(format!("unknown stream preset `{other}`"))),
    };
    if let Some(f) = &section.family {
        spec.family = f.parse::<Family>()?;
    }
    if let Some(n) = section.n_points {
        spec.n_points = n;
    }
    if let Some(d) = section.dims {
        spec.dims = d;
    }
    if let Some(s) = section.noise_sd {
        spec.noise_sd = s;
    }
    if let Some(c) = section.concept {
        spec.concept = c;
    }
    if section.drift.is_some() {
        spec.drift = section.drift.clone();
    }
    spec.seed = seed;
    spec.validate()?;
    Ok(spec)
}

impl ExperimentConfig {
    /// Resolves file values, the seed environment variable and flags, in rising
    /// precedence.
    pub fn resolve(file: &FileConfig, cli: &Overrides) -> Result<Self> {
        Self::resolve_with_env(file, cli, env_seed()?)
    }

    pub fn resolve_with_env(file: &FileConfig, cli: &Overrides, env_seed: Option<u64>) -> Result<Self> {
        let m = &file.model;
        let mut model = ModelConfig::default();
        let set = |dst: &mut f64, a: Option<f64>, b: Option<f64>| {
            if let Some(v) = b.or(a) {
                *dst = v;
            }
        };
        set(&mut model.rho, m.rho, cli.rho);
        set(&mut model.zeta, m.zeta, cli.zeta);
        set(&mut model.uncertainty_threshold, m.uncertainty_threshold, cli.uncertainty_threshold);
        set(&mut model.ik_threshold, m.ik_threshold, cli.ik_threshold);
        if let Some(v) = m.val_fraction {
            model.val_fraction = v;
        }
        if let Some(v) = cli.max_inducing.or(m.max_inducing) {
            model.max_inducing = v;
        }
        if let Some(g) = cli.gamma.as_ref().map(|g| GammaSetting::Word(g.clone())).or(m.gamma.clone()) {
            model.decay = g.to_decay()?;
        }
        if let Some(k) = cli.initial_kernel.as_ref().or(m.initial_kernel.as_ref()) {
            model.initial_kernel = k.parse::<InitialKernel>()?;
        }
        if let Some(pool) = &m.kernel_pool {
            model.kernel_pool = pool.iter().map(|k| k.parse::<KernelFamily>()).collect::<Result<_>>()?;
        }
        if let Some(k) = cli.kpi.as_ref().or(m.kpi.as_ref()) {
            model.kpi = k.parse::<KpiKind>()?;
        }
        if let Some(lb) = m.window_lb {
            model.window_bounds.0 = lb;
        }
        if let Some(ub) = m.window_ub {
            model.window_bounds.1 = ub;
        }
        if let Some(b) = m.optimizer_budget {
            model.optimizer.budget = b;
        }
        if let Some(v) = cli.initial_batch.or(file.batch.initial) {
            model.initial_batch_size = v;
        }
        let increment = cli.increment.or(file.batch.increment).unwrap_or(DEFAULT_INCREMENT);
        if increment == 0 {
            return Err(Error::Validation("increment must be at least 1".into()));
        }

        let seed = cli.seed.or(env_seed).or(file.seed).unwrap_or(0);
        let source = match cli.input.as_ref().or(file.stream.input.as_ref()) {
            Some(p) => StreamSource::Csv(p.clone()),
            None => StreamSource::Generate(stream_spec(&file.stream, seed)?),
        };
        // Capacity follows the online stream length when the length is known up front.
        model.window_capacity = match (m.window_capacity, &source) {
            (Some(c), _) => Some(c),
            (None, StreamSource::Generate(spec)) => {
                let online = online_len(spec.n_points);
                Some(window_capacity(online, increment, model.window_bounds.0, model.window_bounds.1))
            }
            (None, StreamSource::Csv(_)) => None,
        };
        model.validate()?;

        Ok(Self {
            model,
            source,
            increment,
            seed,
            telemetry: cli.telemetry.clone().or(file.output.telemetry.clone()),
            summary: cli.summary.clone().or(file.output.summary.clone()),
            timing: cli.timing || file.output.timing.unwrap_or(false),
        })
    }
}

/// Rows replayed online; the remainder is the held-out test segment.
pub fn online_len(n: usize) -> usize {
    n - (n as f64 * TEST_FRACTION).floor() as usize
}
