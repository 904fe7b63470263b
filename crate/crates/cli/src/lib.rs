//! The `mise-lab` command line: synthesize or load corpora, meta-train,
//! adapt, evaluate, decode, and run the forgetting study, parameter sweep
//! and gradient self-check.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use clap::{Parser, Subcommand};

pub use config::{Flags, RunConfig, SEED_ENV};
pub use error::CliError;
pub use report::{write_report, Outcome, Report, ReportFormat, REPORT_SCHEMA};

#[derive(Debug, Parser)]
#[command(name = "mise-lab", version, about = "Few-shot stressor tagging with meta-knowledge inheritance")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus
    Synth,
    /// Meta-train a model (or the supervised baseline with --no-meta)
    Train,
    /// Adapt a checkpoint on one latest-period task
    Adapt,
    /// K-shot episodic evaluation
    Eval,
    /// Tag every post of a corpus
    Decode,
    /// Catastrophic forgetting study
    Forget,
    /// Grid over λ and t
    Sweep,
    /// Check analytic gradients against finite differences
    Gradcheck,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Adapt => "adapt",
            Command::Eval => "eval",
            Command::Decode => "decode",
            Command::Forget => "forget",
            Command::Sweep => "sweep",
            Command::Gradcheck => "gradcheck",
        }
    }
}

/// Resolves the effective configuration of `cli`.
pub fn resolve(cli: &Cli, env_seed: Option<&str>) -> Result<RunConfig, CliError> {
    let file = match &cli.flags.config {
        Some(path) => Flags::load_file(path)?,
        None => Flags::default(),
    };
    RunConfig::resolve(cli.flags.clone().over(file), env_seed, cli.command == Command::Eval)
}

/// Runs one command to completion.
pub fn dispatch(command: Command, cfg: &RunConfig) -> Result<(), CliError> {
    commands::ensure_parent(cfg.out.as_deref())?;
    commands::timed(command.name(), || {
        match command {
            Command::Synth => commands::synth(cfg)?,
            Command::Train => drop(commands::train(cfg)?),
            Command::Adapt => drop(commands::adapt(cfg)?),
            Command::Eval => drop(commands::eval(cfg)?),
            Command::Decode => commands::decode(cfg)?,
            Command::Forget => drop(commands::forget(cfg)?),
            Command::Sweep => drop(commands::sweep(cfg)?),
            Command::Gradcheck => drop(commands::gradcheck(cfg)?),
        }
        Ok(())
    })
}

/// Parses `args`, runs the command and returns the process exit status.
/// Failures print a JSON error record on standard error.
pub fn main_with_args<I, T>(args: I, env_seed: Option<&str>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("");
            let err = CliError::usage(first.strip_prefix("error: ").unwrap_or(first));
            eprintln!("{}", err.record());
            return err.exit_code();
        }
    };
    match resolve(&cli, env_seed).and_then(|cfg| dispatch(cli.command, &cfg)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.record());
            e.exit_code()
        }
    }
}
