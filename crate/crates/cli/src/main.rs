use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use deepcam_cli::commands;
use deepcam_cli::config::RunConfig;
use deepcam_cli::exit_code;

/// Train and apply layered convolutional analysis models for super-resolution.
///
/// Exit status: 0 success, 1 I/O failure, 2 invalid input or corrupted file,
/// 3 numerical failure. DEEPCAM_SEED overrides the configured seed; RUST_LOG
/// sets the log level (default info).
#[derive(Parser)]
#[command(name = "deepcam", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample LR/HR training pairs from a directory of HR images and cache them.
    Prepare {
        /// Directory of HR training images (PGM or PNG).
        #[arg(long)]
        hr_dir: PathBuf,
        /// Upscaling factor; overrides the config.
        #[arg(long)]
        scale: Option<usize>,
        /// Output cache file.
        #[arg(long)]
        out: PathBuf,
        /// Run configuration for the layer chain, patch counts and seed.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model; also writes `<out-model>.log`.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_model: PathBuf,
        /// Prepared training pairs; overrides `pairs`/`train_dir` in the config.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Super-resolve an image, or every image in a directory.
    Sr {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the model and bicubic interpolation on degraded HR images.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        hr_dir: PathBuf,
        #[arg(long)]
        scale: usize,
        /// CSV output with columns image,method,psnr_db.
        #[arg(long)]
        csv: PathBuf,
    },
    /// Dump threshold tables and, given an input image, per-channel feature maps.
    Inspect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dump_dir: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

fn load_config(path: Option<&PathBuf>) -> anyhow::Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Prepare { hr_dir, scale, out, config } => {
            let mut cfg = load_config(config.as_ref())?;
            if let Some(s) = scale {
                cfg.train.scale = s;
            }
            cfg.validate()?;
            commands::prepare(&cfg, &hr_dir, &out)?;
        }
        Command::Train { config, out_model, pairs } => {
            let mut cfg = load_config(Some(&config))?;
            cfg.validate()?;
            commands::train(&cfg, &out_model, pairs.as_deref())?;
        }
        Command::Sr { model, input, out } => {
            commands::sr(&model, &input, &out)?;
        }
        Command::Eval { model, hr_dir, scale, csv } => {
            let rows = commands::eval(&model, &hr_dir, scale, &csv)?;
            let n = rows.len() as f64;
            log::info!(
                "average over {} images: bicubic {:.3} dB, model {:.3} dB",
                rows.len(),
                rows.iter().map(|r| r.bicubic).sum::<f64>() / n,
                rows.iter().map(|r| r.model).sum::<f64>() / n
            );
        }
        Command::Inspect { model, dump_dir, input } => {
            commands::inspect(&model, &dump_dir, input.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
