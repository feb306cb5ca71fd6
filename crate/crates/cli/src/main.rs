mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use weaksed::loss::LossRegistry;

use config::{Paths, RunConfig};
use error::CliError;

/// Weakly supervised sound event detection.
#[derive(Debug, Parser)]
#[command(name = "weaksed", version)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of `train` and `synth`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Recompute outputs that look up to date.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract log-mel features for every manifest entry into the cache.
    Features,
    /// Train a model; writes checkpoints and metrics.csv to the output dir.
    Train,
    /// Frame scores and transcriptions for the recordings of a manifest.
    Predict {
        /// Defaults to `final.wsck` in the output dir.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to the validation manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Defaults to `predictions` in the output dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Frame-level precision, recall and F1 of a prediction directory.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        /// Strong labels; defaults to the validation annotations.
        #[arg(long)]
        strong: Option<PathBuf>,
        /// Also write per-recording counts as CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// F1-per-epoch curves from metric logs as `<out>.csv` and `<out>.svg`.
    Plot {
        #[arg(long)]
        out: PathBuf,
        /// `label=path` or a path, labelled by its directory.
        #[arg(required = true)]
        logs: Vec<String>,
    },
    /// Write a synthetic tone-burst corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        positives: Option<usize>,
        #[arg(long)]
        negatives: Option<usize>,
        /// Clip length in seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    let registry = LossRegistry::builtin();
    cfg.validate(&registry)?;
    match cli.command {
        Command::Features => {
            let s = commands::features(&cfg, cli.force)?;
            println!("features: {} written, {} up to date", s.written, s.skipped);
        }
        Command::Train => {
            let path = commands::train(&cfg, &registry, &mut std::io::stderr())?;
            println!("{}", path.display());
        }
        Command::Predict {
            checkpoint,
            manifest,
            out,
        } => {
            let out_dir = &cfg.paths.output_dir;
            let checkpoint = checkpoint.unwrap_or_else(|| out_dir.join(weaksed::train::FINAL_CHECKPOINT));
            let manifest = match manifest {
                Some(m) => m,
                None => Paths::require(&cfg.paths.validation_manifest, "validation_manifest")?.to_path_buf(),
            };
            let out = out.unwrap_or_else(|| out_dir.join("predictions"));
            let n = commands::predict(&cfg, &checkpoint, &manifest, &out)?;
            println!("predict: {n} recordings -> {}", out.display());
        }
        Command::Eval {
            predictions,
            strong,
            report,
        } => {
            let strong = match strong {
                Some(s) => s,
                None => Paths::require(&cfg.paths.validation_strong, "validation_strong")?.to_path_buf(),
            };
            print!("{}", commands::eval(&cfg, &predictions, &strong, report.as_deref())?);
        }
        Command::Plot { out, logs } => {
            commands::plot(&logs, &out)?;
            println!("{}.svg", out.display());
        }
        Command::Synth {
            out,
            positives,
            negatives,
            duration,
        } => {
            let s = &mut cfg.synth;
            s.positives = positives.unwrap_or(s.positives);
            s.negatives = negatives.unwrap_or(s.negatives);
            s.duration_seconds = duration.unwrap_or(s.duration_seconds);
            let n = commands::synth(&cfg, cli.seed.unwrap_or(0), &out)?;
            println!("synth: {n} recordings -> {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            let first = first.strip_prefix("error: ").unwrap_or(first);
            eprintln!("{}", CliError::Usage(first.to_string()).line());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
