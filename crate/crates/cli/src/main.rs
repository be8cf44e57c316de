use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;

use error::{CliError, EXIT_USAGE};

/// Racing-line toolkit: synthetic datasets, raceline seeds, minimum-time optimization and
/// the seed benchmark.
#[derive(Debug, Parser)]
#[command(name = "raceline", version)]
pub struct Cli {
    /// TOML config file (overrides built-in defaults; flags override it).
    #[arg(long, global = true, env = config::CONFIG_ENV)]
    pub config: Option<PathBuf>,

    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic circuits with expert lines and telemetry.
    GenDataset(GenDatasetArgs),
    /// Reconstruct an expert line from telemetry laps.
    Align(AlignArgs),
    /// Produce an initialization seed for a circuit.
    Seed(SeedArgs),
    /// Solve the minimum-time problem from a seed.
    Optimize(OptimizeArgs),
    /// Train the raceline predictor on a dataset's training split.
    Train(TrainArgs),
    /// Predict a full-lap raceline with a trained model.
    Predict(PredictArgs),
    /// Compare CL, MC, NN and GT seeds on the held-out circuits.
    Bench(BenchArgs),
    /// Re-render a saved benchmark in another format.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub tracks: Option<usize>,
    #[arg(long)]
    pub first_seed: Option<u64>,
    #[arg(long)]
    pub laps: Option<usize>,
    /// Telemetry position noise (m).
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AlignArgs {
    /// Track CSV (x_m,y_m,w_tr_right_m,w_tr_left_m).
    #[arg(long)]
    pub track: PathBuf,
    /// Telemetry JSONL, one lap per line.
    #[arg(long)]
    pub telemetry: PathBuf,
    /// Output raceline CSV (s_m,d_m).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SeedKind {
    Cl,
    Mc,
    Nn,
}

#[derive(Debug, Args)]
pub struct SeedArgs {
    pub kind: SeedKind,
    #[arg(long)]
    pub track: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Border clearance (m); defaults to the vehicle half width plus 0.5 m.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Weights file, required for `nn`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub track: PathBuf,
    /// Seed raceline CSV; the centerline when absent.
    #[arg(long)]
    pub seed_line: Option<PathBuf>,
    /// Output CSV (s_m,d_m,v_mps).
    #[arg(long)]
    pub out: PathBuf,
    /// Per-iteration convergence trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory for weights.bin, curves.csv and config.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub holdout: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub track: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Json,
    Md,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Trained model; without it the NN seed is skipped.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "md")]
    pub format: Format,
    /// Also draw per-circuit overlays and convergence charts.
    #[arg(long)]
    pub plot: bool,
    #[arg(long)]
    pub holdout: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// bench.json written by `bench`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "md")]
    pub format: Format,
    /// Draw plots; needs `--dataset`.
    #[arg(long, requires = "dataset")]
    pub plot: bool,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

impl From<Format> for raceline_core::bench::ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => Self::Csv,
            Format::Json => Self::Json,
            Format::Md => Self::Md,
        }
    }
}

impl Cli {
    pub fn load_config(&self) -> Result<config::Config, CliError> {
        config::Config::load(self.config.as_deref())
    }
}
