//! `uhnet`: train, run, evaluate, audit and benchmark edge detectors.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use uhnet_core::Error;

use settings::Settings;

#[derive(Parser, Debug)]
#[command(name = "uhnet", version, about = "Ultra-lightweight edge detection networks")]
struct Cli {
    /// `key = value` file; flags given on the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for the compute kernels [default: all logical cores].
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on the train split of a manifest.
    Train(TrainArgs),
    /// Write one grayscale edge PNG per input image.
    Infer(InferArgs),
    /// Score a directory of predicted edge PNGs against manifest labels.
    Eval(EvalArgs),
    /// Print block parameter counts and the per-layer parameter/MAC table.
    Audit(AuditArgs),
    /// Measure batch-1 inference throughput.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// Model size: uhnet, uhnet_m or uhnet_l [default: uhnet].
    #[arg(long)]
    pub preset: Option<String>,
    /// Residual block variant: rb1, rb2, lb, pddp or lb5x5 [default: pddp].
    #[arg(long)]
    pub block: Option<String>,
    /// Stage transition: poolblock or shortcut1x1 [default: poolblock].
    #[arg(long)]
    pub transition: Option<String>,
    /// Batch normalization after each convolution [default: true].
    #[arg(long, value_name = "BOOL", num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub norm: Option<bool>,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Dataset manifest: image<TAB>label[;label...]<TAB>train|test per line.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Directory for epoch_{k}.uhck, model.uhck, model.cfg and loss.csv [default: runs/uhnet].
    #[arg(long, value_name = "DIR")]
    pub output: Option<PathBuf>,
    /// Passes over the training split [default: 15].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Images per optimizer step [default: 1].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Stop after this many optimizer steps [default: no limit].
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// AdamW learning rate [default: 0.001].
    #[arg(long)]
    pub lr: Option<f64>,
    /// AdamW decoupled weight decay [default: 0.01].
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Random flips, rescaling and quarter turns [default: true].
    #[arg(long, value_name = "BOOL", num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub augment: Option<bool>,
    /// Shuffle the sample order every epoch [default: true].
    #[arg(long, value_name = "BOOL", num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub shuffle: Option<bool>,
    /// Averaged label values at or below this are negatives [default: 0].
    #[arg(long)]
    pub gamma_lo: Option<f32>,
    /// Averaged label values at or above this are edges; values between are ignored [default: 0.5].
    #[arg(long)]
    pub gamma_hi: Option<f32>,
    /// Seed for initialization, shuffling and augmentation [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct InferArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Trained weights (.uhck).
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Directory receiving <image stem>.png [default: preds].
    #[arg(long, value_name = "DIR")]
    pub output: Option<PathBuf>,
    /// Thin the edge map with non-maximum suppression [default: false].
    #[arg(long, value_name = "BOOL", num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub nms: Option<bool>,
    /// Take input images from this manifest.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Manifest split to run on: train, test or all [default: test].
    #[arg(long)]
    pub split: Option<commands::SplitSel>,
    /// Input images (PNG, PPM or PGM).
    #[arg(value_name = "IMAGE")]
    pub images: Vec<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct EvalArgs {
    /// Directory of predicted edge PNGs named <image stem>.png.
    #[arg(long, value_name = "DIR")]
    pub preds: Option<PathBuf>,
    /// Manifest naming the images and their annotator label maps.
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Manifest split to score: train, test or all [default: test].
    #[arg(long)]
    pub split: Option<commands::SplitSel>,
    /// Match tolerance as a fraction of the image diagonal; 0.011 suits NYUD-style data [default: 0.0075].
    #[arg(long)]
    pub max_dist: Option<f64>,
    /// Either a count n of evenly spaced thresholds k/(n+1), or a comma-separated list [default: 99].
    #[arg(long)]
    pub thresholds: Option<commands::ThresholdSpec>,
    /// Thin predictions with non-maximum suppression before thresholding [default: true].
    #[arg(long, value_name = "BOOL", num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    pub thin: Option<bool>,
    /// Where the precision/recall table is written [default: <preds>/pr_table.csv].
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct AuditArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Check that these weights fit the configuration before auditing.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Square input side in pixels [default: 200].
    #[arg(long)]
    pub size: Option<usize>,
    /// Layer table layout: table or csv [default: table].
    #[arg(long)]
    pub format: Option<commands::Format>,
}

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Weights to benchmark instead of a seeded initialization.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Square input side in pixels [default: 200].
    #[arg(long)]
    pub size: Option<usize>,
    /// Timed forward passes, at least 10 [default: 50].
    #[arg(long)]
    pub iters: Option<usize>,
    /// Untimed forward passes first [default: 3].
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Seed for the initialization when no checkpoint is given [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
}

/// 0 ok, 1 runtime, 2 configuration or usage, 3 data and I/O.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Checkpoint(_) => 2,
        Error::Data(_) | Error::Io { .. } | Error::Image { .. } => 3,
        Error::Shape(_) | Error::Numeric(_) => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let settings = Settings::load(cli.config.as_deref())?;
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Train(a) => commands::train(&a, &settings),
        Command::Infer(a) => commands::infer(&a, &settings),
        Command::Eval(a) => commands::eval(&a, &settings),
        Command::Audit(a) => commands::audit(&a, &settings),
        Command::Bench(a) => commands::bench(&a, &settings),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
