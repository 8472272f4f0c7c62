//! Command-line driver: benchmark generation, training, evaluation and
//! the composite `run`.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{
    parse_config, CommonOpts, EvalOpts, GenOpts, GenOutOpts, GmmOpts, PathOpts, ResolvedConfig, Sources, TrainOpts,
    SEED_ENV,
};
use crate::error::{CliError, EXIT_CONFIG};

#[derive(Debug, Parser)]
#[command(name = "edm", version, about = "Noisy-label benchmark generation, training and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a noisy blobs training manifest (and optionally a clean test set).
    Gen {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        gen: GenOpts,
        #[command(flatten)]
        out: GenOutOpts,
    },
    /// Train EDM or the cross-entropy baseline on a manifest.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        paths: PathOpts,
        #[command(flatten)]
        train: TrainOpts,
        #[command(flatten)]
        gmm: GmmOpts,
    },
    /// Evaluate a checkpoint: accuracy, split quality, loss and feature exports.
    Eval {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        paths: PathOpts,
        #[command(flatten)]
        gmm: GmmOpts,
        #[command(flatten)]
        eval: EvalOpts,
    },
    /// Generate (unless --manifest is given), train and evaluate in one go.
    Run {
        #[command(flatten)]
        common: CommonOpts,
        #[command(flatten)]
        gen: GenOpts,
        #[command(flatten)]
        paths: PathOpts,
        #[command(flatten)]
        train: TrainOpts,
        #[command(flatten)]
        gmm: GmmOpts,
        #[command(flatten)]
        eval: EvalOpts,
    },
}

impl Command {
    pub fn resolve(&self, env_seed: Option<&str>) -> Result<ResolvedConfig, CliError> {
        let src = match self {
            Command::Gen { common, gen, out } => {
                Sources { common: Some(common), gen: Some(gen), gen_out: Some(out), ..Default::default() }
            }
            Command::Train { common, paths, train, gmm } => Sources {
                common: Some(common),
                paths: Some(paths),
                train: Some(train),
                gmm: Some(gmm),
                ..Default::default()
            },
            Command::Eval { common, checkpoint, paths, gmm, eval } => Sources {
                common: Some(common),
                paths: Some(paths),
                gmm: Some(gmm),
                eval: Some(eval),
                checkpoint: Some(checkpoint.as_ref()),
                ..Default::default()
            },
            Command::Run { common, gen, paths, train, gmm, eval } => Sources {
                common: Some(common),
                gen: Some(gen),
                paths: Some(paths),
                train: Some(train),
                gmm: Some(gmm),
                eval: Some(eval),
                ..Default::default()
            },
        };
        parse_config(&src, env_seed)
    }

    pub fn execute(&self, cfg: &ResolvedConfig) -> Result<serde_json::Value, CliError> {
        match self {
            Command::Gen { .. } => commands::gen(cfg),
            Command::Train { .. } => commands::train(cfg),
            Command::Eval { .. } => commands::eval(cfg),
            Command::Run { .. } => commands::run_experiment(cfg),
        }
    }
}

/// Parses `args`, runs the command and maps the outcome to an exit code.
/// The summary goes to stdout as one JSON line, errors to stderr.
pub fn main_with<I, T>(args: I, env_seed: Option<String>) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = cli.command.resolve(env_seed.as_deref()).and_then(|cfg| cli.command.execute(&cfg));
    match outcome {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("edm: {e}");
            ExitCode::from(&e)
        }
    }
}

pub fn main() -> ExitCode {
    main_with(std::env::args_os(), std::env::var(SEED_ENV).ok())
}
