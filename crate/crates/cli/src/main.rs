//! `hdrunet` — train, run, and inspect the HDR reconstruction network
//! from the command line. Every subcommand exits 0 on success and
//! nonzero on any validation or runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hdrunet_cli::commands;

#[derive(Parser)]
#[command(name = "hdrunet", version, about = "Single-image HDR reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic HDR/LDR dataset with a manifest.
    SynthData {
        /// Output directory for images and manifest.tsv.
        #[arg(long)]
        out: PathBuf,
        /// Number of scene pairs to generate.
        #[arg(long)]
        scenes: usize,
        /// Image extent as HxW, e.g. 64x64.
        #[arg(long)]
        size: String,
        /// Base seed; pair i degrades with seed + i.
        #[arg(long)]
        seed: u64,
        /// Optional config file overriding degradation parameters.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Train a model, from scratch or resumed from a checkpoint.
    Train {
        /// Config file (key = value lines).
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory (containing manifest.tsv) or manifest path.
        #[arg(long)]
        data: PathBuf,
        /// Output directory for checkpoints and train.log.
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint to resume from; the model architecture is taken
        /// from the checkpoint, not the config file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Reconstruct an HDR image from one 8-bit LDR PNG.
    Infer {
        /// Checkpoint holding the trained parameters.
        #[arg(long)]
        ckpt: PathBuf,
        /// Input LDR PNG (8-bit RGB).
        #[arg(long = "in")]
        input: PathBuf,
        /// Output HDR PNG (16-bit RGB).
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted and ground-truth PNG directories by PSNR.
    Eval {
        /// Directory of predicted images.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth images with matching filenames.
        #[arg(long)]
        gt: PathBuf,
    },
    /// Verify analytic gradients against finite differences.
    Gradcheck {
        /// Config selecting the architecture; defaults to the smallest.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train each modulation strategy under identical conditions.
    AblateModulation {
        /// Config file (key = value lines).
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory (containing manifest.tsv) or manifest path.
        #[arg(long)]
        data: PathBuf,
    },
    /// Write the edge-magnitude map of an image as 16-bit PNG.
    GradientMap {
        /// Input PNG (8- or 16-bit RGB).
        #[arg(long = "in")]
        input: PathBuf,
        /// Output PNG (16-bit RGB).
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> hdrunet_core::Result<bool> {
    match cli.command {
        Command::SynthData {
            out,
            scenes,
            size,
            seed,
            params,
        } => commands::synth_data(&out, scenes, &size, seed, params.as_deref()).map(|()| true),
        Command::Train {
            config,
            data,
            out,
            resume,
        } => commands::train(&config, &data, &out, resume.as_deref()).map(|()| true),
        Command::Infer { ckpt, input, out } => {
            commands::infer(&ckpt, &input, &out).map(|()| true)
        }
        Command::Eval { pred, gt } => commands::eval(&pred, &gt).map(|()| true),
        Command::Gradcheck { config } => commands::gradcheck(config.as_deref()),
        Command::AblateModulation { config, data } => {
            commands::ablate_modulation(&config, &data).map(|()| true)
        }
        Command::GradientMap { input, out } => {
            commands::gradient_map(&input, &out).map(|()| true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
