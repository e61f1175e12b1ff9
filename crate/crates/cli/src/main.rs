mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "ksqi", version, about = "Train, apply and evaluate knowledge-driven streaming QoE models")]
struct Cli {
    /// Seed for every randomized step (splits, fitting restarts, synthetic data).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// How failures are reported on stderr.
    #[arg(long, global = true, value_enum, default_value_t = ErrorFormat::Text)]
    error_format: ErrorFormat,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ErrorFormat {
    Text,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit the rebuffering and adaptation grids from labeled datasets.
    Train(TrainArgs),
    /// Score sessions with a trained model.
    Predict(PredictArgs),
    /// Correlation tables and significance matrix for models over datasets.
    Evaluate(EvaluateArgs),
    /// Fit parametric baseline models and write a registry.
    FitBaselines(FitBaselinesArgs),
    /// Choose bitrates for a ladder and network trace.
    Synthesize(SynthesizeArgs),
    /// Global ranking from pairwise preference counts.
    Rank(RankArgs),
    /// Synthetic robustness sweeps over lambda, bin count or constraint sets.
    Sweep(SweepArgs),
}

#[derive(Args, Debug, Clone)]
pub struct GridArgs {
    /// Grid steps per axis.
    #[arg(long, default_value_t = 10)]
    pub n_steps: usize,
    /// Top of the presentation-quality scale.
    #[arg(long, default_value_t = 100.0)]
    pub quality_max: f64,
    /// Longest stall the rebuffering grid covers, in seconds.
    #[arg(long, default_value_t = 10.0)]
    pub rebuffer_max: f64,
}

#[derive(Args, Debug, Clone)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 1e-8)]
    pub tol_primal: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub tol_dual: f64,
    #[arg(long, default_value_t = 200_000)]
    pub max_iter: usize,
    /// Tolerance for the post-training constraint check in the report.
    #[arg(long, default_value_t = 1e-6)]
    pub feasibility_tol: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Labeled dataset files (JSON).
    #[arg(long = "data", required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Where to write the model.
    #[arg(long)]
    pub out: PathBuf,
    /// Training report (JSON); stdout if omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0, conflicts_with = "lambda_sweep")]
    pub lambda: f64,
    /// Cross-validate lambda over decades, e.g. 0.01..10000.
    #[arg(long, value_name = "LO..HI")]
    pub lambda_sweep: Option<String>,
    /// Per-lambda validation losses (CSV) when sweeping.
    #[arg(long, requires = "lambda_sweep")]
    pub sweep_out: Option<PathBuf>,
    /// Fraction of each partition used for fitting during the sweep.
    #[arg(long, default_value_t = 0.8)]
    pub split_fraction: f64,
    /// Constraint families, e.g. S1,S2,A1; all of them by default.
    #[arg(long)]
    pub constraints: Option<String>,
    /// Do not charge an adaptation from the reference quality on the first chunk.
    #[arg(long)]
    pub no_first_chunk_adaptation: bool,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Session log files.
    #[arg(long = "session", num_args = 1..)]
    pub sessions: Vec<PathBuf>,
    /// Dataset files; every session in them is scored.
    #[arg(long = "dataset", num_args = 1..)]
    pub datasets: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Json)]
    pub format: OutputFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Trained model files; named after the file stem.
    #[arg(long = "model", num_args = 1..)]
    pub models: Vec<PathBuf>,
    /// Baseline registry; every model in it is evaluated.
    #[arg(long)]
    pub baselines: Option<PathBuf>,
    /// Labeled dataset files.
    #[arg(long = "dataset", required = true, num_args = 1..)]
    pub datasets: Vec<PathBuf>,
    /// Directory for plcc.csv, srcc.csv, krcc.csv and significance.csv.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub confidence: f64,
}

#[derive(Args, Debug)]
pub struct FitBaselinesArgs {
    #[arg(long = "dataset", required = true, num_args = 1..)]
    pub datasets: Vec<PathBuf>,
    /// Comma-separated model names; the whole registry by default.
    #[arg(long)]
    pub models: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SynthMethod {
    Dp,
    BruteForce,
    Greedy,
    Fixed,
}

#[derive(Args, Debug)]
pub struct SynthesizeArgs {
    /// Bitrate ladder (JSON).
    #[arg(long)]
    pub ladder: PathBuf,
    /// Network trace: whitespace-separated `time_s bits_per_s` lines.
    #[arg(long)]
    pub trace: PathBuf,
    /// KSQI model used as the objective.
    #[arg(long, conflicts_with = "baselines")]
    pub model: Option<PathBuf>,
    /// Baseline registry; pick the objective with --baseline.
    #[arg(long, requires = "baseline")]
    pub baselines: Option<PathBuf>,
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long, value_enum, default_value_t = SynthMethod::Dp)]
    pub method: SynthMethod,
    /// Representation index for --method fixed.
    #[arg(long, default_value_t = 0)]
    pub representation: usize,
    #[arg(long, default_value_t = 60.0)]
    pub buffer_capacity: f64,
    #[arg(long, default_value_t = 2.0)]
    pub startup_threshold: f64,
    /// Player clock and buffer resolution in seconds.
    #[arg(long, default_value_t = 0.1)]
    pub buffer_quantum: f64,
    /// Choices, score and session (JSON); stdout if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the synthesized session log on its own.
    #[arg(long)]
    pub session_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RankArgs {
    /// CSV with header `model_i,model_j,wins_i,trials`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Lambda,
    Bins,
    Ablation,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(value_enum)]
    pub kind: SweepKind,
    /// Training sessions per partition.
    #[arg(long, default_value_t = 300)]
    pub per_partition: usize,
    #[arg(long, default_value_t = 200)]
    pub held_out: usize,
    /// Rating noise on the [0, 100] scale.
    #[arg(long, default_value_t = 2.0)]
    pub noise_sigma: f64,
    /// Lambda decades for the lambda sweep.
    #[arg(long, default_value = "0.01..10000")]
    pub lambdas: String,
    /// Lambda for the bin and ablation sweeps.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Grid steps for the bin sweep.
    #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
    pub bins: Vec<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub solver: SolverArgs,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::Train(a) => commands::train(a, seed),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a, seed),
        Command::FitBaselines(a) => commands::fit_baselines(a, seed),
        Command::Synthesize(a) => commands::synthesize(a),
        Command::Rank(a) => commands::rank(a),
        Command::Sweep(a) => commands::sweep(a, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let format = cli.error_format;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match format {
                ErrorFormat::Text => eprintln!("error: {e}"),
                ErrorFormat::Json => eprintln!("{}", e.to_json()),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
