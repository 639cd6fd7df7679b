use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use webalign_core::pipeline::{cmd_all, run_command, PipelineConfig, Stage, StageOutcome};

/// Learn webpage representations from a user↔URL engagement graph.
#[derive(Debug, Parser)]
#[command(name = "webalign", version)]
struct Cli {
    /// Pipeline config (TOML). Defaults are used for anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Artifact directory, overriding `artifact_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Global seed, overriding `seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run even if upstream artifacts are stale (`all`: rerun every stage).
    #[arg(long, global = true)]
    force: bool,

    /// Threads for graph training and encoder batches.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic planted-community corpus.
    Generate,
    /// Train user and URL graph embeddings.
    TrainGraph,
    /// Align the text encoder with the URL embeddings.
    TrainAlign,
    /// Run the few-shot probe suite.
    Evaluate,
    /// Run every stage, skipping those that are up to date.
    All,
    /// Print the effective config.
    Config,
}

fn effective_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.artifact_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(w) = cli.workers {
        anyhow::ensure!(w > 0, "--workers must be at least 1");
        config.graph.train.workers = w;
    }
    Ok(config)
}

fn print_outcome(o: &StageOutcome) {
    let status = if o.ran { "done" } else { "skipped" };
    println!("[{}] {status}", o.stage.command());
    for line in &o.summary {
        println!("  {line}");
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = effective_config(&cli)?;
    if let Some(w) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .context("configuring worker threads")?;
    }
    let stage = match cli.command {
        Command::Config => {
            print!("{}", config.to_toml()?);
            return Ok(());
        }
        Command::All => {
            for o in cmd_all(&config, cli.force)? {
                print_outcome(&o);
            }
            return Ok(());
        }
        Command::Generate => Stage::Generate,
        Command::TrainGraph => Stage::TrainGraph,
        Command::TrainAlign => Stage::TrainAlign,
        Command::Evaluate => Stage::Evaluate,
    };
    print_outcome(&run_command(&config, stage, cli.force)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
