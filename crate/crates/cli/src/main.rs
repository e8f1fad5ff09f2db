//! `bnasr` executable.
//!
//! Exit codes: 0 on success, 1 for usage and validation errors, 2 when an
//! I/O operation fails.

mod args;
mod commands;
mod config;

use std::io;
use std::process::ExitCode;

use anyhow::Result;
use clap::{CommandFactory, FromArgMatches};

use args::{Cli, Command};

/// Failure in user-supplied inputs or settings rather than in I/O.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct Invalid(pub String);

pub fn invalid(msg: impl Into<String>) -> anyhow::Error {
    Invalid(msg.into()).into()
}

fn build_command() -> clap::Command {
    Cli::command().mut_subcommands(|s| s.args_override_self(true))
}

fn dispatch(command: &Command) -> Result<()> {
    let echoed = match command {
        Command::Curate(a) => config::echo(command.name(), a),
        Command::Trim(a) => config::echo(command.name(), a),
        Command::Vocab(a) => config::echo(command.name(), a),
        Command::Encode(a) => config::echo(command.name(), a),
        Command::Decode(a) => config::echo(command.name(), a),
        Command::Score(a) => config::echo(command.name(), a),
        Command::LmScore(a) => config::echo(command.name(), a),
        Command::TrainToy(a) => config::echo(command.name(), a),
        Command::Eval(a) => config::echo(command.name(), a),
    }?;
    eprint!("{echoed}");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(command.common().workers)
        .build()?;
    pool.install(|| match command {
        Command::Curate(a) => commands::curate(a),
        Command::Trim(a) => commands::trim(a),
        Command::Vocab(a) => commands::vocab(a),
        Command::Encode(a) => commands::encode(a),
        Command::Decode(a) => commands::decode(a),
        Command::Score(a) => commands::score(a),
        Command::LmScore(a) => commands::lm_score(a),
        Command::TrainToy(a) => commands::train_toy(a),
        Command::Eval(a) => commands::eval(a),
    })
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let io_failure = e.chain().any(|c| c.is::<io::Error>());
    let invalid = e.chain().any(|c| c.is::<Invalid>());
    if io_failure && !invalid {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cmd = build_command();
    let argv = match config::expand_argv(&cmd, std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(exit_code(&e));
        }
    };
    let matches = match cmd.try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
