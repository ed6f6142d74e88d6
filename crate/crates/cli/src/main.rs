//! `amvc`: generate synthetic data, train, evaluate and export masks.

mod commands;
mod pgm;

use std::path::PathBuf;
use std::process::ExitCode;

use amvc_core::Error;
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "amvc", version, about = "Adversarially masked video consistency for domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Shorthand for `--set seed=N`, applied last.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (falls back to AMVC_THREADS). Runs are reproducible with 1.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render the source and target domains to `<out>/source` and `<out>/target`.
    GenData(Common),
    /// Train the adaptation-free baseline on labelled source clips.
    TrainSourceOnly(Common),
    /// Alternating adversarial training of encoder and mask generator.
    TrainStage1(Common),
    /// Masked consistency fine-tuning from a Stage-1 checkpoint.
    TrainStage2(Common),
    /// Print accuracy (and optionally a domain probe) as JSON.
    Eval(EvalArgs),
    /// Write per-frame PGM images of generator masks.
    ExportMasks(ExportArgs),
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint to evaluate; defaults to `data.init_checkpoint`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Labelled manifest; defaults to `data.target`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// `train` or `test`.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Also fit a linear source-vs-target probe on encoder features
    /// (needs `data.source` and `data.target`).
    #[arg(long)]
    pub probe: bool,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
    /// Checkpoint holding the generator; defaults to `data.init_checkpoint`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Manifest to take clips from when none are listed; defaults to `data.target`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Number of test-split clips taken from the manifest.
    #[arg(long, default_value_t = 4)]
    pub limit: usize,
    /// Clip files to export.
    pub clips: Vec<PathBuf>,
}

/// Process exit codes.
pub mod exit {
    pub const USAGE: u8 = 1;
    pub const DATA: u8 = 2;
    pub const DIVERGED: u8 = 3;
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => exit::USAGE,
        Error::Diverged { .. } => exit::DIVERGED,
        _ => exit::DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::GenData(c) => commands::gen_data(&c),
        Command::TrainSourceOnly(c) => commands::train(&c, "source-only"),
        Command::TrainStage1(c) => commands::train(&c, "stage1"),
        Command::TrainStage2(c) => commands::train(&c, "stage2"),
        Command::Eval(a) => commands::eval(&a),
        Command::ExportMasks(a) => commands::export_masks(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("amvc: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
