//! `sdpf`: build and check the dictionary, synthesize data, train,
//! evaluate and inspect the inpainting networks.
//!
//! Exit codes: 0 success, 2 invalid arguments, 3 runtime failure.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use run::Invalid;

#[derive(Parser, Debug)]
#[command(name = "sdpf", version, about = "Directional Parseval frame dictionaries and inpainting CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build, verify or export the 49-filter dictionary.
    #[command(subcommand)]
    Dict(DictCommand),
    /// Print trainable parameter counts.
    Params(ParamsArgs),
    /// Generate a stratified synthetic dataset.
    SynthData(SynthArgs),
    /// Train a network.
    Train(TrainArgs),
    /// Train, relax every constrained layer at `--switch-epoch`, keep training.
    SwitchTrain(TrainArgs),
    /// Score a checkpoint per occlusion bucket.
    Eval(EvalArgs),
    /// Restore images with a checkpoint.
    Inpaint(InpaintArgs),
    /// Export learned kernels of one layer and their responses.
    FilterDump(FilterDumpArgs),
}

#[derive(Subcommand, Debug)]
enum DictCommand {
    /// Construct the dictionary and write it as text.
    Build {
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run every frame check on a dictionary file.
    Verify { path: PathBuf },
    /// Write each filter, min-max normalized, as a PGM.
    ExportImages {
        path: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Integer upscaling factor.
        #[arg(long, default_value_t = 1)]
        scale: usize,
    },
}

#[derive(Args, Debug)]
struct ParamsArgs {
    /// Architectures such as `B-C-c-C-C-C`; all 32 when omitted.
    arch: Vec<String>,
    #[arg(long, default_value_t = sdpf_core::net::DEFAULT_SPARSITY)]
    sparsity: usize,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Dataset directory or manifest written by `synth-data`. Synthetic
    /// samples are generated from `--seed` when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Sample count: generated total, or a cap on samples read from `--data`.
    #[arg(long)]
    num_samples: Option<usize>,
    /// Side of generated images.
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Intensity written into occluded pixels.
    #[arg(long, default_value_t = 1.0)]
    fill: f64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 200)]
    num_samples: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    fill: f64,
    /// Directory of clean PGMs to crop instead of procedural textures.
    #[arg(long)]
    images_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, default_value = "B-C-c-C-C-C")]
    arch: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = sdpf_core::net::DEFAULT_SPARSITY)]
    sparsity: usize,
    /// Epoch after which constrained layers become dense (`switch-train` only).
    #[arg(long)]
    switch_epoch: Option<usize>,
    #[command(flatten)]
    data: DataArgs,
    /// Dictionary file; built from scratch when absent.
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Continue from a checkpoint holding optimizer state.
    #[arg(long, conflicts_with = "dict")]
    resume: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Test-set evaluation cadence in epochs; 0 disables it.
    #[arg(long, default_value_t = 0)]
    eval_every: usize,
    /// Checkpoint cadence in epochs; 0 disables it.
    #[arg(long, default_value_t = 10)]
    checkpoint_every: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Seeds generated data.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    split: SplitArg,
    /// Also report mean single-image forward latency.
    #[arg(long)]
    time: bool,
    /// Forward passes averaged by `--time`.
    #[arg(long, default_value_t = 100)]
    time_runs: usize,
    /// Score raw outputs instead of outputs clamped to [0, 1].
    #[arg(long)]
    no_clamp: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InpaintArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corrupted PGM images.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    no_clamp: bool,
}

#[derive(Args, Debug)]
struct FilterDumpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// 1-based layer index.
    #[arg(long, default_value_t = 1)]
    layer: usize,
    /// PGM images whose responses are exported.
    images: Vec<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Integer upscaling factor for kernel images.
    #[arg(long, default_value_t = 1)]
    scale: usize,
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Dict(DictCommand::Build { out }) => commands::dict_build(&out),
        Command::Dict(DictCommand::Verify { path }) => commands::dict_verify(&path),
        Command::Dict(DictCommand::ExportImages { path, out_dir, scale }) => {
            commands::dict_export_images(&path, &out_dir, scale)
        }
        Command::Params(a) => commands::params(&a.arch, a.sparsity),
        Command::SynthData(a) => commands::synth_data(&a),
        Command::Train(a) => commands::train(&a, false),
        Command::SwitchTrain(a) => commands::train(&a, true),
        Command::Eval(a) => commands::eval(&a),
        Command::Inpaint(a) => commands::inpaint(&a),
        Command::FilterDump(a) => commands::filter_dump(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Invalid>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
