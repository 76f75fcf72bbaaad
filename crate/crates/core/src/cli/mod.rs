//! The `lpl` command-line front end.

mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};

/// Environment variable that overrides the `seed` key of any config.
pub const SEED_ENV: &str = "LPL_SEED";

#[derive(Debug, Parser)]
#[command(name = "lpl", version, about = "Class-level logit perturbation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form class errors over a grid of one perturbation parameter.
    TheorySweep {
        #[arg(long)]
        config: PathBuf,
        /// Add Monte-Carlo columns regardless of the config.
        #[arg(long)]
        with_mc: bool,
        /// Output directory; without it the table goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model, optionally with a hyper-parameter search and a baseline.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class relative loss variation of several perturbation methods.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic dataset and its metadata sidecar.
    Datagen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// What a command prints once it succeeds.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Output {
    pub stdout: String,
    pub stderr: String,
}

pub fn seed_override(value: Option<&str>) -> Result<Option<u64>> {
    value
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))
        })
        .transpose()
}

pub fn run(cli: &Cli, seed: Option<u64>) -> Result<Output> {
    match &cli.command {
        Command::TheorySweep { config, with_mc, out } => commands::theory_sweep(config, *with_mc, out.as_deref(), seed),
        Command::Train { config, out } => commands::train_cmd(config, out, seed),
        Command::Analyze { config, out } => commands::analyze_cmd(config, out, seed),
        Command::Datagen { config, out } => commands::datagen_cmd(config, out, seed),
    }
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Parse { .. } => 2,
        Error::Diverged { .. } => 3,
        Error::Infeasible(_) => 4,
        _ => 1,
    }
}

/// Parses the process arguments, runs the command and maps failures to exit codes.
pub fn main_entry() -> std::process::ExitCode {
    let cli = Cli::parse();
    let env = std::env::var(SEED_ENV).ok();
    let result = seed_override(env.as_deref()).and_then(|seed| run(&cli, seed));
    match result {
        Ok(out) => {
            print!("{}", out.stdout);
            eprint!("{}", out.stderr);
            std::process::ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn seed_override_parsing() {
        assert_eq!(seed_override(None).unwrap(), None);
        assert_eq!(seed_override(Some("17")).unwrap(), Some(17));
        assert!(matches!(seed_override(Some("x1")), Err(Error::Config(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Infeasible("x".into())), 4);
        let d = Error::Diverged {
            epoch: 0,
            batch: 0,
            detail: String::new(),
        };
        assert_eq!(exit_code(&d), 3);
        assert_eq!(exit_code(&Error::Singular("x".into())), 1);
    }
}
