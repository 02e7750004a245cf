//! The `compgen` command line: data generation, lexicon induction,
//! augmentation, training and evaluation driven by one resolved config.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;

use clap::{CommandFactory, FromArgMatches, Parser};

use crate::commands::Command;
use crate::config::{extract_flags, keys_help, ConfigError, RunConfig, SEED_ENV};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "compgen", version, about = "Compositional-generalization data and training pipeline")]
pub struct Cli {
    /// Config file of `section.key=value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

/// Exit status for an error: problems with inputs and configuration are the
/// user's, anything else is internal.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() || cause.is::<std::io::Error>() {
            return EXIT_USER;
        }
        if let Some(e) = cause.downcast_ref::<compgen::Error>() {
            return match e {
                compgen::Error::NonFiniteLoss(_) => EXIT_INTERNAL,
                _ => EXIT_USER,
            };
        }
    }
    EXIT_INTERNAL
}

fn usage_error(msg: impl std::fmt::Display) -> i32 {
    let synopsis = Cli::command().render_usage();
    eprintln!("error: {msg}\n\n{synopsis}\n\nFor more information, try '--help'.");
    EXIT_USER
}

/// Run the tool on `argv` (program name first) and return the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<String> = match argv.into_iter().map(|a| a.into().into_string()).collect() {
        Ok(v) => v,
        Err(bad) => return usage_error(format!("argument is not valid UTF-8: {bad:?}")),
    };
    let (rest, flags) = match extract_flags(argv) {
        Ok(x) => x,
        Err(e) => return usage_error(e),
    };
    let matches = Cli::command().after_long_help(keys_help()).try_get_matches_from(rest);
    let cli = match matches.and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    let cfg = match RunConfig::resolve(std::env::var(SEED_ENV).ok(), cli.config.as_deref(), &flags) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USER;
        }
    };
    match panic::catch_unwind(AssertUnwindSafe(|| commands::execute(cli.command, &cfg))) {
        Ok(Ok(())) => EXIT_OK,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
        Err(_) => {
            eprintln!("error: internal failure");
            EXIT_INTERNAL
        }
    }
}
