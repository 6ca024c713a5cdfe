mod commands;
mod failure;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixnet::arch::Variant;
use mixnet::autodiff::Reduction;
use mixnet::metrics::HdMode;
use mixnet::volume::Plane;

use failure::Failure;

/// Multi-modality MRI segmentation with dilated residual networks.
///
/// Typical pipeline: generate -> train (once per plane) -> predict (once per
/// plane) -> fuse -> evaluate. Exit codes: 0 ok, 1 usage error, 2 data
/// error, 3 verification failure.
#[derive(Parser, Debug)]
#[command(name = "mixnet", version, about, long_about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic multi-modality dataset with a manifest.
    Generate(GenerateArgs),
    /// Train one network on slices of one anatomical plane.
    Train(TrainArgs),
    /// Predict a class-probability volume for one subject.
    Predict(PredictArgs),
    /// Fuse per-plane probability volumes into one label volume.
    Fuse(FuseArgs),
    /// Score a label volume against a reference.
    Evaluate(EvaluateArgs),
    /// Run built-in verification suites.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Volume size as X,Y,Z voxels.
    #[arg(long, value_delimiter = ',', default_values_t = [96, 96, 96])]
    pub dims: Vec<usize>,
    /// Voxel spacing in mm as X,Y,Z.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 1.0, 1.0])]
    pub spacing: Vec<f64>,
    /// Number of classes including background.
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 9)]
    pub subjects: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Standard deviation of the additive intensity noise.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    /// Amplitude of the smooth multiplicative bias field.
    #[arg(long, default_value_t = 0.1)]
    pub bias: f64,
}

/// Flags override the config file, which overrides built-in defaults.
#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory or manifest file.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory (config echo, log, checkpoint).
    #[arg(long)]
    pub out: PathBuf,
    /// TOML settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Network variant: v1, v2 or v3 [default: v2].
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Slicing plane: sagittal, coronal or transverse [default: transverse].
    #[arg(long)]
    pub plane: Option<Plane>,
    /// Subject held out of training and used for validation.
    #[arg(long)]
    pub holdout: Option<String>,
    /// [default: 10]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 8]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial learning rate, halved at 20, 40, 60, 75, 80, 85, 90 and 95% of
    /// the epochs [default: 2e-4].
    #[arg(long)]
    pub lr0: Option<f64>,
    /// Nesterov momentum [default: 0.99].
    #[arg(long)]
    pub momentum: Option<f64>,
    /// L2 weight decay [default: 1e-3].
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Loss reduction over pixels: mean or sum [default: mean].
    #[arg(long, value_parser = parse_reduction)]
    pub reduction: Option<Reduction>,
    /// Seeds initialization, shuffling and augmentation [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Keep every n-th slice of each training subject.
    #[arg(long)]
    pub slice_stride: Option<usize>,
    /// Channels per level instead of the standard widths.
    #[arg(long)]
    pub width: Option<usize>,
    /// Disable augmentation.
    #[arg(long)]
    pub no_augment: bool,
    /// Continue from the run directory's checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Stop once this many epochs are complete; a later --resume continues.
    #[arg(long)]
    pub until_epoch: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory or manifest file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub subject: String,
    /// Slicing plane; defaults to the plane the checkpoint was trained on.
    #[arg(long)]
    pub plane: Option<Plane>,
    /// Output probability volume header (.json).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    /// Comma-separated PLANE=PATH pairs of probability volumes.
    #[arg(long, value_delimiter = ',', required = true)]
    pub inputs: Vec<String>,
    /// Sagittal:coronal:transverse weights.
    #[arg(long, default_value = "1:1:4")]
    pub weights: String,
    /// Output label volume header (.json).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Predicted label volume header.
    #[arg(long)]
    pub pred: PathBuf,
    /// Reference label volume header.
    #[arg(long)]
    pub truth: PathBuf,
    /// Report JSON; a text table is written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of classes including background; defaults to the largest label
    /// present plus one.
    #[arg(long)]
    pub classes: Option<usize>,
    /// How the two directed HD95 distance sets combine: max or pooled.
    #[arg(long, default_value = "max", value_parser = parse_hd_mode)]
    pub hd_mode: HdMode,
    /// JSON score weights for the overall score; placeholder weights otherwise.
    #[arg(long)]
    pub score_weights: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Suites to run (repeatable); all when omitted.
    #[arg(long)]
    pub suite: Vec<mixnet::verify::Suite>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the machine-readable summary here as well as to stdout.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn parse_reduction(s: &str) -> Result<Reduction, String> {
    match s {
        "mean" => Ok(Reduction::Mean),
        "sum" => Ok(Reduction::Sum),
        _ => Err(format!("expected mean or sum, got {s:?}")),
    }
}

fn parse_hd_mode(s: &str) -> Result<HdMode, String> {
    match s {
        "max" => Ok(HdMode::Max),
        "pooled" => Ok(HdMode::Pooled),
        _ => Err(format!("expected max or pooled, got {s:?}")),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Fuse(a) => commands::fuse(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Verify(a) => commands::verify(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(failure::USAGE as u8) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
