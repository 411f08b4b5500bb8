use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flowguide_cli::commands::{self, SplitChoice};
use flowguide_cli::{CliError, ExperimentConfig, Overrides};

/// Motion-guided latent diffusion experiments on synthetic video.
///
/// Settings come from built-in defaults, then the `--config` file, then
/// the flags below.
#[derive(Parser)]
#[command(name = "flowguide", version)]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master random seed.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads for per-sequence work.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    /// Working directory holding every stage's outputs.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic training and held-out sequences.
    Synth {
        /// Keep finished sequences of a partial dataset.
        #[arg(long)]
        resume: bool,
    },
    /// Pretrain the autoencoder and train the latent denoiser.
    TrainDenoiser,
    /// Draw latents (unguided and, with guidance on, guided) and decode them.
    Sample {
        #[arg(long, value_enum, default_value = "all")]
        split: SplitChoice,
    },
    /// Fine-tune the temporal and fusion layers of the decoder.
    FinetuneDecoder,
    /// Compute PSNR, SSIM and warping error for decoded sequences.
    Evaluate {
        /// Directory of `<sequence>/frames/` outputs; defaults to the samples.
        #[arg(long, value_name = "DIR")]
        results: Option<PathBuf>,
    },
    /// Run the guidance × temporal-decoder grid on held-out sequences.
    Ablate,
    /// Finite-difference checks of the energy gradient and warp adjoint.
    Gradcheck {
        /// Perturb the analytic gradient; the check must then fail.
        #[arg(long)]
        corrupt_gradient: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        workers: cli.workers,
        out: cli.out,
    };
    let cfg = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Synth { resume } => commands::synth(&cfg, resume),
        Command::TrainDenoiser => commands::train_denoiser(&cfg),
        Command::Sample { split } => commands::sample(&cfg, split),
        Command::FinetuneDecoder => commands::finetune(&cfg),
        Command::Evaluate { results } => commands::evaluate(&cfg, results.as_deref()),
        Command::Ablate => commands::ablate(&cfg),
        Command::Gradcheck { corrupt_gradient } => commands::gradcheck(&cfg, corrupt_gradient),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
