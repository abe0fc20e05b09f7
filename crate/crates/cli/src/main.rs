//! `ssd`: extract features, build folds, train, evaluate, benchmark and
//! serve the screening models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::PipelineConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ssd_core::Error),
    #[error(transparent)]
    Service(#[from] ssd_service::ServiceError),
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 for I/O, 2 for invalid input, 3 for numeric failure.
    pub fn exit_code(&self) -> u8 {
        use ssd_core::ErrorKind;
        let core_code = |e: &ssd_core::Error| match e.kind() {
            ErrorKind::Io => 1,
            ErrorKind::Validation => 2,
            ErrorKind::Numeric => 3,
        };
        match self {
            CliError::Core(e) => core_code(e),
            CliError::Service(ssd_service::ServiceError::Core(e)) => core_code(e),
            CliError::Service(_) | CliError::Io { .. } => 1,
            CliError::Validation(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "ssd", version, about = "Speech-sound-disorder screening pipeline")]
struct Cli {
    /// Pipeline configuration file (TOML). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for folds, augmentation and training [env: SSD_SEED]
    #[arg(long, global = true, env = "SSD_SEED", hide_env = true)]
    seed: Option<u64>,

    /// Worker threads for extraction and materialization.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Log more (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write three-channel log-Mel feature maps for every manifest sample.
    Extract(commands::ExtractArgs),
    /// Build a stratified fold plan for one experiment.
    Fold(commands::FoldArgs),
    /// Train one fold, or every fold with --all-folds.
    Train(commands::TrainArgs),
    /// Score saved fold checkpoints on their test sets.
    Eval(commands::EvalArgs),
    /// Measure single-input inference latency.
    Bench(commands::BenchArgs),
    /// Generate a synthetic labelled corpus with a manifest.
    Synth(commands::SynthArgs),
    /// Run the screening HTTP service.
    Serve(commands::ServeArgs),
}

/// Inputs shared by the commands that read a corpus.
#[derive(Debug, Clone, Args)]
pub struct CorpusArgs {
    /// Manifest CSV.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Directory the manifest's audio paths are relative to [default: the manifest's directory]
    #[arg(long)]
    pub audio_root: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.master_seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    match cli.command {
        Command::Extract(a) => commands::extract(cfg, a),
        Command::Fold(a) => commands::fold(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Eval(a) => commands::eval(cfg, a),
        Command::Bench(a) => commands::bench(cfg, a),
        Command::Synth(a) => commands::synth(cfg, a),
        Command::Serve(a) => commands::serve(cfg, a),
    }
}
