//! `ideolens` — batch pipeline for inferring ideology scores from the
//! images accounts share. See the README for the stage-by-stage walkthrough.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ideolens_cli::config::{Overrides, PipelineConfig};
use ideolens_cli::stages;

#[derive(Parser)]
#[command(
    name = "ideolens",
    version,
    about = "Infer political-ideology scores for accounts from their shared images"
)]
struct Cli {
    /// Optional key=value config file; flags override file values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus with a pre-populated embedding cache.
    Synth,
    /// Embed every image in the manifest and write per-account mean embeddings.
    Embed,
    /// Fit the cluster model and train both ideology models on labeled accounts.
    Train,
    /// Score accounts with the trained models.
    Predict,
    /// Summarize a predictions CSV into per-group distribution statistics.
    Report,
    /// Print per-group account and image counts for a manifest.
    Stats,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = PipelineConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .map_err(|e| anyhow::anyhow!("configuring {} workers: {e}", cfg.workers))?;
    }
    match cli.command {
        Command::Synth => stages::cmd_synth(&cfg),
        Command::Embed => stages::cmd_embed(&cfg),
        Command::Train => stages::cmd_train(&cfg),
        Command::Predict => stages::cmd_predict(&cfg),
        Command::Report => stages::cmd_report(&cfg),
        Command::Stats => stages::cmd_stats(&cfg, &mut std::io::stdout().lock()),
    }
}
