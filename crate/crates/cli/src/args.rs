use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "openset",
    version,
    about = "Open-set recognition over embedding vectors"
)]
pub struct Cli {
    /// Master seed; falls back to the config file, then OPENSET_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Print progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a Gaussian cluster dataset.
    Synth(SynthArgs),
    /// Build a fold plan and optionally write per-fold views.
    Split(SplitArgs),
    /// Train a head, fit a method and select thresholds.
    Calibrate(Box<CalibrateArgs>),
    /// Score a dataset with a fitted method and policy.
    Predict(PredictArgs),
    /// Open-set F-score over a threshold grid.
    Sweep(SweepArgs),
    /// Metric report for a predictions file.
    Evaluate(EvaluateArgs),
    /// Run every method on every fold and aggregate.
    Protocol(ProtocolArgs),
    /// Render the aggregate table of a protocol run.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output CSV; a manifest is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub n_known: usize,
    #[arg(long, default_value_t = 3)]
    pub n_unknown: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 200)]
    pub train: usize,
    #[arg(long, default_value_t = 100)]
    pub val: usize,
    #[arg(long, default_value_t = 100)]
    pub test: usize,
    /// Total samples per class split 6:2:2; overrides --train/--val/--test.
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long, default_value_t = 8.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 1.0)]
    pub spread: f64,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output fold plan JSON.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, default_value_t = 3)]
    pub unknowns_per_fold: usize,
    /// Classes on the unknown side of every fold.
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<String>,
    /// Also write fold_<k>_known.csv and fold_<k>_unknown.csv here.
    #[arg(long)]
    pub views_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodName {
    Openmax,
    #[value(alias = "arcface")]
    Gallery,
    Cac,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ThresholdKind {
    Fixed,
    Quantile,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AveragingArg {
    Macro,
    Micro,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Higher,
    Lower,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// JSON in the protocol config layout; the first method is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<MethodName>,
    #[arg(long, value_enum)]
    pub threshold: Option<ThresholdKind>,
    /// Quantile for --threshold quantile.
    #[arg(long)]
    pub q: Option<f64>,
    /// Number of fixed thresholds spanning the validation scores.
    #[arg(long)]
    pub grid_points: Option<usize>,
    /// Classes treated as unknown during calibration.
    #[arg(long, value_delimiter = ',')]
    pub unknown: Vec<String>,
    /// Classes left out of training and validation.
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<String>,
    /// Take the partition of one fold from a plan file.
    #[arg(long, requires = "fold")]
    pub plan: Option<PathBuf>,
    #[arg(long, requires = "plan")]
    pub fold: Option<usize>,
    /// Use dataset vectors as embeddings or activations without training.
    #[arg(long)]
    pub precomputed: bool,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write the emitted vectors of every sample as a dataset CSV.
    #[arg(long)]
    pub emit: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct HyperArgs {
    /// OpenMax Weibull tail size.
    #[arg(long)]
    pub eta: Option<usize>,
    /// OpenMax number of revised ranks.
    #[arg(long)]
    pub alpha: Option<usize>,
    /// ArcFace scale.
    #[arg(long)]
    pub scale: Option<f64>,
    /// ArcFace angular margin in radians.
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    pub gallery_size: Option<usize>,
    #[arg(long)]
    pub anchor_magnitude: Option<f64>,
    #[arg(long)]
    pub anchor_weight: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Per-class cap on training samples.
    #[arg(long)]
    pub train_cap: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Policy JSON; without it no threshold is applied.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Only score this split.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, value_enum)]
    pub direction: DirectionArg,
    #[arg(long, default_value_t = 200)]
    pub grid_points: usize,
    /// Explicit comma-separated thresholds instead of an even grid.
    #[arg(long, value_delimiter = ',')]
    pub grid: Vec<f64>,
    #[arg(long, value_enum, default_value_t = AveragingArg::Macro)]
    pub averaging: AveragingArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Evaluate the closed-set column instead of the thresholded decision.
    #[arg(long)]
    pub no_threshold: bool,
    #[arg(long, value_enum, default_value_t = AveragingArg::Macro)]
    pub averaging: AveragingArg,
    /// Report JSON; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProtocolArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Concurrent fold jobs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Output directory of a protocol run.
    #[arg(long)]
    pub run_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Markdown)]
    pub format: ReportFormat,
}
