//! Command-line front end of `monge-core`.

pub mod args;
pub mod commands;
pub mod config;

use clap::Parser;
use monge_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_NONCONVERGENCE: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_) | Error::Contract(_) | Error::Parse(_) | Error::Json(_) => EXIT_USAGE,
        Error::NonFinite(_) | Error::Divergence(_) => EXIT_NUMERICAL,
        Error::NonConvergence { .. } => EXIT_NONCONVERGENCE,
        _ => EXIT_FAILURE,
    }
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match args::Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        args::Command::Train(a) => commands::train(a),
        args::Command::Baseline(a) => commands::baseline(a),
        args::Command::Analyze(a) => commands::analyze(a),
        args::Command::Experiment(a) => commands::experiment(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
