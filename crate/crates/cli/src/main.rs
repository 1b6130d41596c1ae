mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use log::error;

use commands::{EvaluateArgs, GenCorpusArgs, RenderArgs, ScoreArgs, TrainArgs};
use config::{FileConfig, Settings, SettingsArgs, UsageError};

#[derive(Debug, Parser)]
#[command(name = "geosent", version, about = "Regional sentiment scores from geotagged tweets")]
struct Cli {
    /// TOML file whose keys mirror the flags; flags win
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Append raw tweets (JSON lines) to the raw table
    Collect {
        #[command(flatten)]
        settings: SettingsArgs,
    },
    /// Resolve and trim the raw table into the parsed table
    Parse {
        #[command(flatten)]
        settings: SettingsArgs,
    },
    /// Train the Naive Bayes model
    Train {
        #[command(flatten)]
        settings: SettingsArgs,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Report model accuracy on a labelled test set
    Evaluate {
        #[command(flatten)]
        settings: SettingsArgs,
        #[command(flatten)]
        args: EvaluateArgs,
    },
    /// Aggregate the parsed table into score rows
    Score {
        #[command(flatten)]
        settings: SettingsArgs,
        #[command(flatten)]
        args: ScoreArgs,
    },
    /// Pearson correlation of the two approaches per country
    Correlate {
        #[command(flatten)]
        settings: SettingsArgs,
    },
    /// Render maps and line graphs from the score table
    Render {
        #[command(flatten)]
        settings: SettingsArgs,
        #[command(flatten)]
        args: RenderArgs,
    },
    /// collect, parse, score and render in one run
    Pipeline {
        #[command(flatten)]
        settings: SettingsArgs,
    },
    /// Write a seeded synthetic raw corpus
    GenCorpus {
        #[command(flatten)]
        settings: SettingsArgs,
        #[command(flatten)]
        args: GenCorpusArgs,
    },
}

impl Command {
    fn settings(&self) -> &SettingsArgs {
        match self {
            Command::Collect { settings }
            | Command::Parse { settings }
            | Command::Train { settings, .. }
            | Command::Evaluate { settings, .. }
            | Command::Score { settings, .. }
            | Command::Correlate { settings }
            | Command::Render { settings, .. }
            | Command::Pipeline { settings }
            | Command::GenCorpus { settings, .. } => settings,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(path) => {
            if !path.exists() {
                anyhow::bail!("config not found: {}", path.display());
            }
            FileConfig::load(path)?
        }
        None => FileConfig::default(),
    };
    if let Some(n) = cli.threads.or(file.threads) {
        if n == 0 {
            return Err(config::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let s = Settings::resolve(cli.command.settings().clone(), file)?;
    match &cli.command {
        Command::Collect { .. } => commands::run_collect(&s),
        Command::Parse { .. } => commands::run_parse(&s),
        Command::Train { args, .. } => commands::run_train(&s, args),
        Command::Evaluate { args, .. } => commands::run_evaluate(&s, args),
        Command::Score { args, .. } => commands::run_score(&s, args),
        Command::Correlate { .. } => commands::run_correlate(&s),
        Command::Render { args, .. } => commands::run_render(&s, args).map(drop),
        Command::Pipeline { .. } => commands::run_pipeline(&s),
        Command::GenCorpus { args, .. } => commands::run_gen_corpus(&s, args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
