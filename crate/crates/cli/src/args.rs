use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rankcast_core::bundle::Scope;
use rankcast_core::compress::Method;
use rankcast_core::formula::TargetKind;

#[derive(Debug, Parser)]
#[command(name = "rankcast", version, about = "Predict and apply low-rank compression of transformer weights")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Spectral statistics, scope aggregates and MDL bits of a bundle.
    Analyze(AnalyzeArgs),
    /// Low-rank compress a bundle and write the factored result.
    Compress(CompressArgs),
    /// Estimate degradation of compressing a bundle at a given ratio.
    Predict(PredictArgs),
    /// Rank catalog formulas by leave-one-out correlation.
    Fit(FitArgs),
    /// Search for a formula by genetic programming.
    Discover(DiscoverArgs),
    /// Synthetic layer experiments and perturbation-bound checks.
    Synthlab {
        #[command(subcommand)]
        experiment: Experiment,
    },
    /// Reports over observation records.
    Report {
        #[command(subcommand)]
        report: ReportKind,
    },
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Bundle directory.
    pub bundle: PathBuf,
    /// Multiply factor pairs back together before analysis.
    #[arg(long)]
    pub expand: bool,
    /// Leave singular values out of the JSON report.
    #[arg(long)]
    pub no_sigma: bool,
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    pub bundle: PathBuf,
    #[arg(long)]
    pub method: Method,
    /// Parameter ratio kept, in (0, 1].
    #[arg(long)]
    pub gamma: f64,
    /// Activation-scaling exponent.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Calibration bundle (samples×cols per weight name).
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Use whitened SVD-LLM (only with `--method svdllm`).
    #[arg(long)]
    pub whiten: bool,
    #[arg(long, default_value = "both")]
    pub target: Scope,
    #[arg(long, default_value_t = 1e-8)]
    pub ridge: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output bundle directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    pub bundle: PathBuf,
    #[arg(long)]
    pub gamma: f64,
    /// Fit report or single coefficient object.
    #[arg(long)]
    pub coeffs: PathBuf,
    /// Formula ID; defaults to the γ·ρ̄_s interaction.
    #[arg(long, default_value = "X1")]
    pub formula: String,
    #[arg(long, default_value = "both")]
    pub scope: Scope,
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Catalog {
    All,
    Templates,
    Discovered,
    Supplementary,
}

#[derive(Debug, Args)]
pub struct RecordFilter {
    /// Observation CSV.
    pub records: PathBuf,
    #[arg(long)]
    pub target: TargetKind,
    #[arg(long)]
    pub layer: Option<Scope>,
    #[arg(long)]
    pub task: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub filter: RecordFilter,
    #[arg(long, value_enum, default_value = "all")]
    pub catalog: Catalog,
    /// Restrict to these formula IDs (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub formulas: Vec<String>,
    /// Keep only the first N ranked entries.
    #[arg(long)]
    pub top: Option<usize>,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    #[command(flatten)]
    pub filter: RecordFilter,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub population: Option<usize>,
    #[arg(long)]
    pub generations: Option<usize>,
    #[arg(long)]
    pub tournament: Option<usize>,
    #[arg(long)]
    pub parsimony: Option<f64>,
    #[arg(long)]
    pub max_vars: Option<usize>,
    #[arg(long)]
    pub max_nonlinear: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Attention,
    Mlp,
    Hadamard,
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub table: bool,
}

#[derive(Debug, Subcommand)]
pub enum Experiment {
    /// Relative output error over a γ grid.
    Sweep {
        /// Layer kinds; attention and MLP when omitted.
        #[arg(long, value_enum, value_delimiter = ',')]
        kind: Vec<Kind>,
        /// Comma-separated γ values; 0.10..1.00 step 0.05 by default.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        /// D x INNER x SAMPLES, e.g. 896x4864x64.
        #[arg(long)]
        dims: Option<String>,
        #[arg(long, default_value_t = 8)]
        trials: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Rank 17 functional forms on a sweep curve.
    Forms {
        #[arg(long, value_enum, default_value = "attention")]
        kind: Kind,
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        #[arg(long)]
        dims: Option<String>,
        #[arg(long, default_value_t = 8)]
        trials: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Effective rank of Hadamard products of random low-rank matrices.
    Hadamard {
        /// Comma-separated target ranks; 10..90 step 10 by default.
        #[arg(long, value_delimiter = ',')]
        ranks: Vec<usize>,
        /// ROWS x COLS.
        #[arg(long, default_value = "256x256")]
        dims: String,
        #[command(flatten)]
        common: Common,
    },
    /// Error growth between two ratios, attention vs MLP.
    Degradation {
        #[arg(long, default_value_t = 0.1)]
        gamma_low: f64,
        #[arg(long, default_value_t = 0.87)]
        gamma_high: f64,
        /// MLP D x FF x SAMPLES; attention uses D x D x SAMPLES.
        #[arg(long)]
        dims: Option<String>,
        #[arg(long, default_value_t = 8)]
        trials: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Randomized checks of the perturbation bounds.
    Perturbation {
        /// M x N.
        #[arg(long, default_value = "32x24")]
        dims: String,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Every experiment at default settings.
    All {
        /// Trials per sweep point.
        #[arg(long, default_value_t = 8)]
        trials: usize,
        #[arg(long, default_value_t = 10_000)]
        perturbation_trials: usize,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReportKind {
    /// Per-task Pearson r between −ln(perplexity) and accuracy.
    PplAcc {
        records: PathBuf,
        #[arg(long)]
        table: bool,
    },
}
