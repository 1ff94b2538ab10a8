use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "ultrabm", version, about = "Low-light image super-resolution: data generation, training, evaluation and inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write synthetic low-light / reference PNG pairs and a manifest.
    GenData(GenDataArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Score a model on a manifest; writes metrics.csv and metrics.json.
    Eval(EvalArgs),
    /// Enhance a single image.
    Infer(InferArgs),
    /// Train and evaluate the full model and each ablated variant.
    Ablate(AblateArgs),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Output directory; every file the command writes goes here.
    #[arg(long, short = 'o')]
    pub out_dir: PathBuf,
    /// JSON config file. Flags given on the command line override its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub scale: Option<usize>,
    /// Low-resolution size, `N` or `HxW`.
    #[arg(long)]
    pub size: Option<String>,
    /// Exposure range in stops, `A..B`, sampled uniformly per pair.
    #[arg(long, allow_hyphen_values = true)]
    pub ev: Option<String>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub bit_depth: Option<u8>,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProfileArg {
    Desk,
    Paper,
}

/// Overrides of the training configuration.
#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
    /// Total iterations, split over the six progressive stages.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Use one stage with this batch size instead of the progressive schedule.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Low-resolution crop side for the single-stage schedule.
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub scale: Option<usize>,
    /// Seed of the model initialization and of the batch sampler.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Disable random flips of training crops.
    #[arg(long)]
    pub no_augment: bool,
    /// Remove a component or loss term; repeat or separate with commas.
    #[arg(long, value_delimiter = ',')]
    pub ablate: Vec<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Training manifest.
    #[arg(long)]
    pub data: PathBuf,
    /// Continue from a checkpoint; its configuration is the starting point.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

/// Metric settings shared by `eval` and `ablate`.
#[derive(Args, Debug, Clone, Default)]
pub struct MetricFlags {
    /// NIQE model file; the bundled synthetic model is used otherwise.
    #[arg(long)]
    pub niqe_model: Option<PathBuf>,
    /// Skip NIQE.
    #[arg(long)]
    pub no_niqe: bool,
    /// LPIPS backbone weights; without them LPIPS is computed uncalibrated.
    #[arg(long)]
    pub lpips_backbone: Option<PathBuf>,
    /// LPIPS per-channel linear weights.
    #[arg(long, requires = "lpips_backbone")]
    pub lpips_lin: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Model checkpoint; without it an untrained model is scored.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write input | output | reference mosaics to `grid/`.
    #[arg(long)]
    pub grid: bool,
    #[command(flatten)]
    pub metrics: MetricFlags,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub input: PathBuf,
    /// Model checkpoint; without it an untrained model is used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Expected scale; must agree with the checkpoint.
    #[arg(long)]
    pub scale: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output file name inside the output directory.
    #[arg(long)]
    pub output: Option<String>,
    #[arg(long)]
    pub bit_depth: Option<u8>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: PathBuf,
    /// Manifest to score on; defaults to the training manifest.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    /// Variants to compare against the full model.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<String>,
    #[command(flatten)]
    pub flags: TrainFlags,
    #[command(flatten)]
    pub metrics: MetricFlags,
}
