mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Memorization runs and certificates for quadratic-activation networks.
#[derive(Debug, Parser)]
#[command(name = "quadmem", version)]
pub struct Cli {
    /// Log progress at info level.
    #[arg(long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train the two-layer network.
    Train2(Train2Args),
    /// Train the quadratic layer on top of random polynomial features.
    Train3(Train3Args),
    /// Landscape report and stationarity check for saved weights.
    Landscape(LandscapeArgs),
    /// Smallest singular value and leave-one-out distance of the tensor data matrix.
    Spectra(SpectraArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Where the training data comes from. Without `--data` or IDX files a
/// synthetic dataset is generated.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset file written by `gen` or a training run.
    #[arg(long, conflicts_with_all = ["idx_images", "n"])]
    pub data: Option<PathBuf>,
    #[arg(long, requires = "idx_labels")]
    pub idx_images: Option<PathBuf>,
    #[arg(long, requires = "idx_images")]
    pub idx_labels: Option<PathBuf>,
    /// Keep only the first N IDX samples.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Project IDX inputs onto this many principal components.
    #[arg(long)]
    pub pca: Option<usize>,
    /// Synthetic sample count.
    #[arg(long)]
    pub n: Option<usize>,
    /// Synthetic input dimension.
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed_data: u64,
    /// Standard deviation of Gaussian noise added to the inputs after row
    /// normalization (two-layer runs only).
    #[arg(long)]
    pub input_noise: Option<f64>,
    /// Multiply every label by this factor after loading.
    #[arg(long)]
    pub label_scale: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerKind {
    Pgd,
    Gd,
    Adam,
}

#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    /// Target loss ε.
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long, value_enum, default_value_t = OptimizerKind::Pgd)]
    pub optimizer: OptimizerKind,
    /// Fixed step size instead of c/ℓ (PGD and GD).
    #[arg(long)]
    pub step: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub c: f64,
    /// Failure probability for the PGD schedule.
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_iters: u64,
    #[arg(long, default_value_t = 1)]
    pub record_every: u64,
    /// Stop as soon as f(W) ≤ ε (PGD only).
    #[arg(long)]
    pub stop_at_target: bool,
    #[arg(long, default_value_t = 100)]
    pub target_check_every: u64,
    #[arg(long, default_value_t = 4)]
    pub seed_optimizer: u64,
    /// Start from a random point of this Frobenius norm radius instead of W = 0.
    #[arg(long, default_value_t = 0.0)]
    pub init_radius: f64,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Adam mini-batch size; 0 means full batch.
    #[arg(long, default_value_t = 0)]
    pub batch_size: usize,
    #[arg(long, requires = "lr_decay_every")]
    pub lr_decay: Option<f64>,
    #[arg(long, requires = "lr_decay")]
    pub lr_decay_every: Option<u64>,
    /// Run this many independent trials concurrently, each in its own
    /// subdirectory, with seeds offset by the trial index.
    #[arg(long, default_value_t = 1)]
    pub trials: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Train2Args {
    #[command(flatten)]
    pub data: DataArgs,
    /// Hidden width; defaults to 2d+2.
    #[arg(long)]
    pub r: Option<usize>,
    /// Allow r < 2d+2.
    #[arg(long)]
    pub force: bool,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args)]
pub struct Train3Args {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    /// Feature count; defaults to 2⌈√n⌉.
    #[arg(long)]
    pub k: Option<usize>,
    /// Smoothing variance.
    #[arg(long, default_value_t = 0.01)]
    pub v: f64,
    #[arg(long, default_value_t = 2)]
    pub seed_features: u64,
    #[arg(long, default_value_t = 3)]
    pub seed_noise: u64,
    /// Use R = I (k = d) instead of random features.
    #[arg(long)]
    pub identity_features: bool,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(Debug, Args)]
pub struct LandscapeArgs {
    /// Two-layer dataset the weights act on (`features.bin` for three-layer runs).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    /// Regularization γ for the stationarity check.
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    #[arg(long, requires = "rho")]
    pub eps: Option<f64>,
    #[arg(long, requires = "eps")]
    pub rho: Option<f64>,
    #[arg(long, default_value_t = 20_000)]
    pub hessian_cap: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpectraMatrix {
    /// Columns x_j^{⊗q}.
    X,
    /// Columns z_j^{⊗2} of smoothed random features.
    Z,
}

#[derive(Debug, Args)]
pub struct SpectraArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value_t = SpectraMatrix::X)]
    pub matrix: SpectraMatrix,
    /// Tensor order for the X matrix.
    #[arg(long, default_value_t = 2)]
    pub q: usize,
    #[arg(long, default_value_t = 2)]
    pub p: usize,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub v: f64,
    #[arg(long, default_value_t = 2)]
    pub seed_features: u64,
    #[arg(long, default_value_t = 3)]
    pub seed_noise: u64,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
