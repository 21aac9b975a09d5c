//! Command-line driver: one subcommand per pipeline stage.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stepcheck_core::pipeline::{run_all, PipelineConfig, PipelineError, Stage};

#[derive(Parser)]
#[command(name = "stepcheck", version, about = "Mine, execute and rerank how-to instructions for mobile apps")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for page-parallel stages.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides the configured work directory.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Extract and ground instructions from every corpus page.
    Extract,
    /// Execute grounded instructions against the app scripts.
    Execute,
    /// Build feature vectors for every corpus page.
    Featurize,
    /// Generate and split the synthetic training corpus.
    Synth,
    /// Train the configured ranking models on the synthetic splits.
    Train,
    /// Order the target groups with every trained model.
    Rerank,
    /// Score all methods and write the metrics report.
    Eval,
    /// Run every applicable stage in order.
    All,
}

fn config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    if let Some(dir) = &cli.work_dir {
        cfg.work_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = config(cli)?;
    let stage = match cli.command {
        Command::Extract => Stage::Extract,
        Command::Execute => Stage::Execute,
        Command::Featurize => Stage::Featurize,
        Command::Synth => Stage::Synth,
        Command::Train => Stage::Train,
        Command::Rerank => Stage::Rerank,
        Command::Eval => Stage::Eval,
        Command::All => return run_all(&cfg),
    };
    stage.run(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
