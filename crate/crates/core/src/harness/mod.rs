//! Strict online replay of a stream through the model, with per-batch telemetry and
//! a final held-out evaluation.

pub mod config;
pub mod io;

use std::fs::File;
use std::io::BufWriter;
use std::ops::Range;
use std::path::Path;

use serde::Serialize;

use crate::datagen::Stream;
use crate::drift::{self, window_capacity};
use crate::error::{Error, Result};
use crate::model::{DaoModel, StepReport};

pub use config::{online_len, ExperimentConfig, FileConfig, Overrides, StreamSource};
use io::JsonLines;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Process exit code for a failed experiment.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Input(_) | Error::Validation(_) | Error::Parse { .. } | Error::Io { .. } => EXIT_INPUT,
        _ => EXIT_NUMERICAL,
    }
}

/// One telemetry line.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TelemetryRecord {
    pub batch: u64,
    pub mse: f64,
    pub r2: Option<f64>,
    pub drift: &'static str,
    pub hyperopt: bool,
    pub kernel: &'static str,
    pub inducing: usize,
    pub absorbed: usize,
    pub micros: u64,
}

impl TelemetryRecord {
    pub fn from_report(r: &StepReport, timing: bool) -> Self {
        Self {
            batch: r.batch_index,
            mse: r.mse,
            r2: r.r2,
            drift: r.verdict.name(),
            hyperopt: r.hyperopt_ran,
            kernel: r.active_kernel,
            inducing: r.inducing_count,
            absorbed: r.absorbed_count,
            micros: if timing { r.step_micros } else { 0 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftEvent {
    pub batch: u64,
    pub kind: &'static str,
    pub dm: f64,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KernelSwitch {
    pub batch: u64,
    pub kernel: &'static str,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Timing {
    pub p50_micros: u64,
    pub p90_micros: u64,
    pub p99_micros: u64,
    pub max_micros: u64,
}

impl Timing {
    fn from_samples(samples: &[u64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_unstable();
        let pick = |q: f64| s[((q * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        Self { p50_micros: pick(0.5), p90_micros: pick(0.9), p99_micros: pick(0.99), max_micros: s[s.len() - 1] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    /// `ok`, or `aborted` when a step failed mid-stream.
    pub status: &'static str,
    pub error: Option<String>,
    pub seed: u64,
    pub n_points: usize,
    pub n_online: usize,
    pub n_test: usize,
    pub batches: u64,
    pub initial_kernel: &'static str,
    pub final_kernel: &'static str,
    pub final_inducing: usize,
    pub test_mse: Option<f64>,
    pub test_r2: Option<f64>,
    pub drift_events: Vec<DriftEvent>,
    pub kernel_switches: Vec<KernelSwitch>,
    pub hyperopt_batches: usize,
    /// Largest stream row handed to the model before the final evaluation.
    pub max_online_row: usize,
    pub test_start_row: usize,
    pub timing: Timing,
}

/// What an observer sees after each increment.
pub struct BatchEvent<'a> {
    /// Stream rows of this increment.
    pub rows: Range<usize>,
    pub report: &'a StepReport,
    /// Predictive means for the increment, made before the model saw it.
    pub prequential: &'a [f64],
    pub model: &'a DaoModel,
}

/// Refuses to hand the model any row of the held-out segment.
struct LeakGuard {
    test_start: usize,
    max_seen: usize,
}

impl LeakGuard {
    fn admit(&mut self, rows: &Range<usize>) -> Result<()> {
        if rows.end > self.test_start {
            return Err(Error::State(format!(
                "row {} belongs to the held-out segment starting at {}",
                rows.end - 1,
                self.test_start
            )));
        }
        self.max_seen = self.max_seen.max(rows.end - 1);
        Ok(())
    }
}

/// Telemetry and summary of a run that stopped early.
#[derive(Debug)]
pub struct Aborted {
    pub error: Error,
    pub summary: Option<Summary>,
}

impl From<Error> for Aborted {
    fn from(error: Error) -> Self {
        Aborted { error, summary: None }
    }
}

/// Replays `stream` through a fresh model: initialization on the first
/// `initial_batch_size` rows, then increments, then the test segment.
pub fn run_stream(
    cfg: &ExperimentConfig,
    stream: &Stream,
    telemetry: Option<&mut JsonLines<BufWriter<File>>>,
    mut observer: impl FnMut(&BatchEvent<'_>),
) -> std::result::Result<Summary, Aborted> {
    let n = stream.len();
    let n_online = online_len(n);
    let mut model_cfg = cfg.model.clone();
    if model_cfg.window_capacity.is_none() {
        let (lb, ub) = model_cfg.window_bounds;
        model_cfg.window_capacity = Some(window_capacity(n_online, cfg.increment, lb, ub));
    }
    let init_n = model_cfg.initial_batch_size;
    if n_online < init_n {
        return Err(Error::input(format!(
            "online segment has {n_online} rows, fewer than the initial batch of {init_n}"
        ))
        .into());
    }
    let mut guard = LeakGuard { test_start: n_online, max_seen: 0 };
    let init_rows = 0..init_n;
    guard.admit(&init_rows)?;
    let base = stream.slice(0, init_n);
    let mut model = DaoModel::init(model_cfg, &base.x, &base.y)?;
    let initial_kernel = model.active_kernel().name();

    let mut telemetry = telemetry;
    let mut drift_events = Vec::new();
    let mut kernel_switches = Vec::new();
    let mut hyperopt_batches = 0;
    let mut micros = Vec::new();
    let mut start = init_n;
    let mut failure = None;
    while start < n_online {
        let end = (start + cfg.increment).min(n_online);
        let rows = start..end;
        guard.admit(&rows)?;
        let batch = stream.slice(start, end);
        let prequential = model.predict(&batch.x)?.mean;
        let report = match model.update(&batch.x, &batch.y) {
            Ok(r) => r,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        if let Some(t) = telemetry.as_deref_mut() {
            let path = cfg.telemetry.as_deref().unwrap_or(Path::new("telemetry"));
            t.write(&TelemetryRecord::from_report(&report, cfg.timing))
                .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        }
        if let Some(v) = report.detail.filter(|v| v.kind.is_drift()) {
            drift_events.push(DriftEvent { batch: report.batch_index, kind: v.kind.name(), dm: v.dm, tau: v.tau });
        }
        if report.kernel_switched {
            kernel_switches.push(KernelSwitch { batch: report.batch_index, kernel: report.active_kernel });
        }
        hyperopt_batches += usize::from(report.hyperopt_ran);
        micros.push(report.step_micros);
        observer(&BatchEvent { rows: rows.clone(), report: &report, prequential: prequential.as_slice(), model: &model });
        start = end;
    }

    let mut summary = Summary {
        status: "ok",
        error: None,
        seed: cfg.seed,
        n_points: n,
        n_online,
        n_test: n - n_online,
        batches: model.batches(),
        initial_kernel,
        final_kernel: model.active_kernel().name(),
        final_inducing: model.inducing_count(),
        test_mse: None,
        test_r2: None,
        drift_events,
        kernel_switches,
        hyperopt_batches,
        max_online_row: guard.max_seen,
        test_start_row: n_online,
        timing: Timing::from_samples(&micros),
    };
    if let Some(error) = failure {
        summary.status = "aborted";
        summary.error = Some(error.to_string());
        return Err(Aborted { error, summary: Some(summary) });
    }
    if n_online < n {
        let test = stream.slice(n_online, n);
        let pred = model.predict(&test.x)?.mean;
        summary.test_mse = Some(drift::kpi_mse(test.y.as_slice(), pred.as_slice())?);
        summary.test_r2 = drift::kpi_r2(test.y.as_slice(), pred.as_slice()).ok();
    }
    Ok(summary)
}

pub fn load_stream(cfg: &ExperimentConfig) -> Result<Stream> {
    match &cfg.source {
        StreamSource::Generate(spec) => spec.generate(),
        StreamSource::Csv(path) => io::read_csv(path),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    std::fs::write(path, text + "\n").map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Loads the stream, replays it and writes the configured telemetry and summary files.
/// On a mid-stream failure telemetry written so far stays on disk and an `aborted`
/// summary is written.
pub fn run_experiment(cfg: &ExperimentConfig) -> std::result::Result<Summary, Aborted> {
    let stream = load_stream(cfg)?;
    let mut telemetry = match &cfg.telemetry {
        Some(p) => Some(JsonLines::new(create(p)?)),
        None => None,
    };
    let result = run_stream(cfg, &stream, telemetry.as_mut(), |_| {});
    if let Some(path) = &cfg.summary {
        let written = match &result {
            Ok(s) => write_summary(path, s),
            Err(Aborted { summary: Some(s), .. }) => write_summary(path, s),
            Err(_) => Ok(()),
        };
        written?;
    }
    result
}
