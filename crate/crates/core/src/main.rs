use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use driftgp::datagen::certify;
use driftgp::error::Error;
use driftgp::harness::config::{self, SEED_ENV};
use driftgp::harness::{exit_code, io, run_experiment, Aborted, ExperimentConfig, FileConfig, Overrides};

#[derive(Parser)]
#[command(name = "driftgp", version, about = "Online sparse GP regression with drift detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stream and write it as CSV.
    Generate {
        /// TOML config; only `seed` and `[stream]` are read.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Stream preset: stationary-sine or abrupt-swap.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        family: Option<String>,
        #[arg(long)]
        n_points: Option<usize>,
        #[arg(long)]
        dims: Option<usize>,
        #[arg(long)]
        noise_sd: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Replay a stream through the model and write telemetry and a summary.
    Run(RunArgs),
    /// Report distribution-shift metrics between consecutive concepts of a CSV stream.
    Certify {
        #[arg(long)]
        input: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV stream to replay instead of generating one.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_inducing: Option<usize>,
    /// Decay rate, or `off`.
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    uncertainty_threshold: Option<f64>,
    #[arg(long)]
    ik_threshold: Option<f64>,
    /// r2 or mse.
    #[arg(long)]
    kpi: Option<String>,
    /// Kernel family name, or `auto`.
    #[arg(long)]
    initial_kernel: Option<String>,
    #[arg(long)]
    initial_batch: Option<usize>,
    #[arg(long)]
    increment: Option<usize>,
    #[arg(long)]
    telemetry: Option<PathBuf>,
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Record step wall-clock times in telemetry.
    #[arg(long)]
    timing: bool,
}

impl RunArgs {
    fn overrides(self) -> (Option<PathBuf>, Overrides) {
        let o = Overrides {
            seed: self.seed,
            max_inducing: self.max_inducing,
            gamma: self.gamma,
            rho: self.rho,
            zeta: self.zeta,
            uncertainty_threshold: self.uncertainty_threshold,
            ik_threshold: self.ik_threshold,
            kpi: self.kpi,
            initial_kernel: self.initial_kernel,
            initial_batch: self.initial_batch,
            increment: self.increment,
            input: self.input,
            telemetry: self.telemetry,
            summary: self.summary,
            timing: self.timing,
        };
        (self.config, o)
    }
}

fn load_file(path: Option<&PathBuf>) -> Result<FileConfig, Error> {
    path.map_or_else(|| Ok(FileConfig::default()), |p| FileConfig::load(p))
}

fn env_seed() -> Result<Option<u64>, Error> {
    std::env::var(SEED_ENV)
        .ok()
        .map(|v| v.trim().parse().map_err(|_| Error::Validation(format!("{SEED_ENV} must be an unsigned integer"))))
        .transpose()
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(e) as u8)
}

// A closed stdout (e.g. piped into `head`) is not an error worth reporting.
fn print_json<T: serde::Serialize>(v: &T) {
    let text = serde_json::to_string_pretty(v).expect("serializable");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Generate { config, preset, family, n_points, dims, noise_sd, seed, out } => {
            let result = (|| {
                let mut file = load_file(config.as_ref())?;
                let s = &mut file.stream;
                s.preset = preset.or(s.preset.take());
                s.family = family.or(s.family.take());
                s.n_points = n_points.or(s.n_points);
                s.dims = dims.or(s.dims);
                s.noise_sd = noise_sd.or(s.noise_sd);
                let seed = seed.or(env_seed()?).or(file.seed).unwrap_or(0);
                let stream = config::stream_spec(&file.stream, seed)?.generate()?;
                io::write_csv(&out, &stream)?;
                Ok::<_, Error>(stream.len())
            })();
            match result {
                Ok(n) => {
                    eprintln!("wrote {n} rows to {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Run(args) => {
            let (path, overrides) = args.overrides();
            let cfg = match load_file(path.as_ref()).and_then(|f| ExperimentConfig::resolve(&f, &overrides)) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            };
            match run_experiment(&cfg) {
                Ok(summary) => {
                    print_json(&summary);
                    ExitCode::SUCCESS
                }
                Err(Aborted { error, summary }) => {
                    if let Some(s) = summary {
                        print_json(&s);
                    }
                    fail(&error)
                }
            }
        }
        Command::Certify { input } => match io::read_csv(&input).and_then(|s| certify(&s)) {
            Ok(report) => {
                print_json(&report);
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
    }
}
