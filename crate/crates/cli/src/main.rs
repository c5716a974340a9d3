use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use weighted_conformal::harness::{Method, ReportFormat};
use weighted_conformal::localcov::KernelKind;

mod commands;

/// Conformal prediction bands under covariate shift.
#[derive(Debug, Parser)]
#[command(name = "conformal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the repeated-split covariate-shift experiment and write a report.
    Simulate(SimulateArgs),
    /// Split conformal intervals from a fit set and a calibration set.
    SplitBand(SplitBandArgs),
    /// Unweighted full conformal bands over a response grid.
    FullBand(BandArgs),
    /// Full conformal bands weighted by a covariate likelihood ratio.
    WeightedBand(WeightedBandArgs),
    /// Fit the train-vs-test logistic classifier and print per-row weights.
    EstimateWeights(EstimateArgs),
    /// Full conformal bands localized around a covariate value.
    LocalBand(LocalBandArgs),
    /// Run the built-in consistency and coverage checks.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
struct TableArgs {
    /// Field delimiter of the training data.
    #[arg(long, default_value_t = ',')]
    delimiter: char,
    /// The training data has no header row.
    #[arg(long)]
    no_header: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Dataset to re-split each trial (response in the last column).
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    data: Option<PathBuf>,
    /// Draw a fresh synthetic pool of this many rows each trial.
    #[arg(long)]
    synthetic: Option<usize>,
    /// Covariate dimension of the synthetic model.
    #[arg(long, default_value_t = 2, requires = "synthetic")]
    dim: usize,
    #[arg(long, default_value_t = 5000)]
    trials: usize,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Exponential tilt coefficients, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    tilt: Option<Vec<f64>>,
    /// Methods to run, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "none,oracle,logistic,ess")]
    methods: Vec<Method>,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Size of the shifted test set as a fraction of the data.
    #[arg(long, default_value_t = 0.25)]
    shift_fraction: f64,
    /// Report path; the format follows the extension unless `--format` is given.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<ReportFormat>,
    #[command(flatten)]
    table: TableArgs,
}

#[derive(Debug, Args)]
struct WeightArgs {
    /// Use the exponential tilt `exp(x . beta)` as the likelihood ratio.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "shift")]
    tilt: Option<Vec<f64>>,
    /// Estimate the likelihood ratio from these shifted covariates.
    #[arg(long)]
    shift: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    clip_lo: f64,
    #[arg(long, default_value_t = 0.99)]
    clip_hi: f64,
}

#[derive(Debug, Args)]
struct SplitBandArgs {
    /// Data the regression is fit on.
    #[arg(long)]
    fit: PathBuf,
    /// Calibration data.
    #[arg(long)]
    calibration: PathBuf,
    /// Query points: covariates, optionally followed by the response.
    #[arg(long)]
    query: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[command(flatten)]
    weights: WeightArgs,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    table: TableArgs,
}

#[derive(Debug, Args)]
struct BandArgs {
    #[arg(long)]
    train: PathBuf,
    /// Query points: covariates, optionally followed by the response.
    #[arg(long)]
    query: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Number of response grid points.
    #[arg(long, default_value_t = weighted_conformal::conformal::DEFAULT_GRID_COUNT)]
    grid: usize,
    /// Lower end of the grid (defaults to the training range widened by three ranges).
    #[arg(long, allow_hyphen_values = true, requires = "grid_hi")]
    grid_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true, requires = "grid_lo")]
    grid_hi: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    table: TableArgs,
}

#[derive(Debug, Args)]
struct WeightedBandArgs {
    #[command(flatten)]
    band: BandArgs,
    #[command(flatten)]
    weights: WeightArgs,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Covariates labelled 0.
    #[arg(long)]
    train: PathBuf,
    /// Covariates labelled 1.
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    clip_lo: f64,
    #[arg(long, default_value_t = 0.99)]
    clip_hi: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LocalBandArgs {
    #[command(flatten)]
    band: BandArgs,
    /// Localization center, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    center: Vec<f64>,
    #[arg(long)]
    bandwidth: f64,
    #[arg(long, default_value = "gaussian")]
    kernel: KernelKind,
}

#[derive(Debug, Args)]
struct ValidateArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Fewer Monte Carlo replicates.
    #[arg(long)]
    quick: bool,
    /// Print the results as JSON.
    #[arg(long)]
    json: bool,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::SplitBand(a) => commands::split_band(a),
        Command::FullBand(a) => commands::full_band(a),
        Command::WeightedBand(a) => commands::weighted_band(a),
        Command::EstimateWeights(a) => commands::estimate_weights(a),
        Command::LocalBand(a) => commands::local_band(a),
        Command::Validate(a) => commands::validate(a),
    }
}
