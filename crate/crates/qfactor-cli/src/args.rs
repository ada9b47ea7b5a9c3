//! Flag definitions for the five subcommands.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "qfactor",
    version,
    about = "Quantile factor models for panels with observed characteristics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model to a panel CSV and write plot-ready outputs.
    Fit(FitArgs),
    /// Run fixed-b significance tests on a previously fitted model.
    Test(TestArgs),
    /// Run a Monte Carlo study from a simulation design file.
    Simulate(SimulateArgs),
    /// Simulate a fixed-b critical-value table and store it.
    Critvals(CritvalsArgs),
    /// Sweep interior-knot counts and report the BIC selection.
    Knots(KnotsArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Panel CSV with header unit,time,y,x1,...,xJ in long format.
    pub input: PathBuf,
    /// Quantile level in (0, 1).
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Interior knot count L.
    #[arg(long, default_value_t = 1, conflicts_with = "knots_grid")]
    pub knots: usize,
    /// Comma-separated interior-knot candidates; the BIC minimizer is used
    /// and the sweep is written next to the other outputs.
    #[arg(long, value_delimiter = ',')]
    pub knots_grid: Option<Vec<usize>>,
    /// Select the knot count by BIC (implied by --knots-grid).
    #[arg(long, requires = "knots_grid")]
    pub select_bic: bool,
    /// Spline order m (4 = cubic).
    #[arg(long, default_value_t = 4)]
    pub order: usize,
    /// Convergence tolerance on the alternation.
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    /// Iteration budget for the alternation.
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    /// Points per loading-curve grid.
    #[arg(long, default_value_t = 201)]
    pub grid_points: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// Panel CSV the model was fitted on.
    pub input: PathBuf,
    /// Fitted model JSON written by the fit subcommand.
    #[arg(long)]
    pub model: PathBuf,
    /// Density bandwidth constant; the bandwidth is kappa * N^(-1/5).
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    /// Fixed-b bandwidth fraction in (0, 1].
    #[arg(long, default_value_t = 0.2)]
    pub b: f64,
    /// HAC kernel: bartlett or qs.
    #[arg(long, default_value = "bartlett")]
    pub kernel: String,
    /// Unit ordering: given, covariate:<j> (1-based), or pc1.
    #[arg(long, default_value = "given")]
    pub ordering: String,
    /// Confidence level for significance calls.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Seed recorded in auto-simulated critical-value tables.
    #[arg(long, default_value_t = 20240814)]
    pub seed: u64,
    /// Time grid of the critical-value simulation.
    #[arg(long, default_value_t = 1000)]
    pub n_grid: usize,
    /// Replications of the critical-value simulation.
    #[arg(long, default_value_t = 50000)]
    pub n_reps: usize,
    /// Periods per year for the annualized volatility column.
    #[arg(long, default_value_t = 251.0)]
    pub annualization: f64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation design JSON: one design, or an array with --rate-study.
    pub input: PathBuf,
    /// Replications per design.
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Study target: rmse, coverage, or size.
    #[arg(long, default_value = "rmse")]
    pub task: String,
    /// Fit log-log error slopes across an array of designs.
    #[arg(long)]
    pub rate_study: bool,
    /// Quantile level for estimation; defaults to the design's tau.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Interior knot count L for the fits.
    #[arg(long, default_value_t = 1)]
    pub knots: usize,
    /// Spline order m.
    #[arg(long, default_value_t = 4)]
    pub order: usize,
    /// Convergence tolerance on the alternation.
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    /// Iteration budget for the alternation.
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    /// Density bandwidth constant.
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    /// Fixed-b bandwidth fraction.
    #[arg(long, default_value_t = 0.2)]
    pub b: f64,
    /// HAC kernel: bartlett or qs.
    #[arg(long, default_value = "bartlett")]
    pub kernel: String,
    /// Unit ordering: given, covariate:<j> (1-based), or pc1.
    #[arg(long, default_value = "given")]
    pub ordering: String,
    /// Confidence level for coverage and size tasks.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    /// Factor column under test (0 = intercept).
    #[arg(long, default_value_t = 1)]
    pub target_factor: usize,
    /// Period under test.
    #[arg(long, default_value_t = 0)]
    pub target_period: usize,
    /// Seed recorded in auto-simulated critical-value tables.
    #[arg(long, default_value_t = 20240814)]
    pub seed: u64,
    /// Time grid of the critical-value simulation.
    #[arg(long, default_value_t = 1000)]
    pub n_grid: usize,
    /// Replications of the critical-value simulation.
    #[arg(long, default_value_t = 50000)]
    pub n_reps: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CritvalsArgs {
    /// HAC kernel: bartlett or qs.
    #[arg(long, default_value = "bartlett")]
    pub kernel: String,
    /// Fixed-b bandwidth fraction in (0, 1].
    #[arg(long, default_value_t = 0.2)]
    pub b: f64,
    /// Restriction count the table covers.
    #[arg(long, default_value_t = 1)]
    pub q: usize,
    /// Time grid of the bridge simulation.
    #[arg(long, default_value_t = 1000)]
    pub n_grid: usize,
    /// Simulation replications.
    #[arg(long, default_value_t = 50000)]
    pub n_reps: usize,
    /// Simulation seed, recorded in the table.
    #[arg(long, default_value_t = 20240814)]
    pub seed: u64,
    /// Output directory; the file name encodes the parameters.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct KnotsArgs {
    /// Panel CSV with header unit,time,y,x1,...,xJ in long format.
    pub input: PathBuf,
    /// Quantile level in (0, 1).
    #[arg(long, default_value_t = 0.5)]
    pub tau: f64,
    /// Comma-separated interior-knot candidates.
    #[arg(long, value_delimiter = ',', required = true)]
    pub knots_grid: Vec<usize>,
    /// Spline order m.
    #[arg(long, default_value_t = 4)]
    pub order: usize,
    /// Convergence tolerance on the alternation.
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    /// Iteration budget for the alternation.
    #[arg(long, default_value_t = 50)]
    pub max_iter: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}
