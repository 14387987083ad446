use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dpnse_cli::commands::{
    cmd_augment_preview, cmd_eval, cmd_explain, cmd_synth, cmd_train, SplitChoice,
};

/// Dual-path SE classifier toolkit: synthetic data, training, evaluation,
/// local explanations, and augmentation previews.
#[derive(Parser)]
#[command(name = "dpnse", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a reproducible synthetic four-class dataset.
    Synth {
        /// Output directory for images and manifest.tsv.
        #[arg(long)]
        out: PathBuf,
        /// Images per class.
        #[arg(long, default_value_t = 50)]
        n_per_class: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Train a model on a manifest's training split.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        /// Write the epoch,loss,acc CSV here instead of stdout.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Overrides train.seed from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a trained model: metric table plus optional JSON report.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Which samples to score: all, train, or holdout.
        #[arg(long, default_value = "all")]
        split: SplitChoice,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Explain one prediction: red/blue overlay plus coefficient JSON.
    Explain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Class to explain; defaults to the model's prediction.
        #[arg(long)]
        class: Option<usize>,
        /// Output prefix: writes <out>.ppm and <out>.json.
        #[arg(long, default_value = "explanation")]
        out: PathBuf,
        /// Worker threads for model evaluations.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Draw augmented variants of one image.
    AugmentPreview {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Number of draws.
        #[arg(short, long, default_value_t = 8)]
        n: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> dpnse_cli::Result<()> {
    match cli.command {
        Command::Synth { out, n_per_class, seed } => cmd_synth(&out, n_per_class, seed),
        Command::Train { config, manifest, out, log, seed } => {
            cmd_train(&config, seed, &manifest, &out, log.as_deref())
        }
        Command::Eval { config, model, manifest, split, out, seed } => {
            cmd_eval(&config, seed, &model, &manifest, split, out.as_deref())
        }
        Command::Explain { config, model, image, class, out, jobs, seed } => {
            cmd_explain(&config, seed, &model, &image, class, &out, jobs)
        }
        Command::AugmentPreview { config, image, n, out, jobs, seed } => {
            cmd_augment_preview(&config, seed, &image, n, &out, jobs)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
