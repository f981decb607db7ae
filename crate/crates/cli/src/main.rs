mod args;
mod commands;
mod predictions;

use std::fmt;
use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};

/// Bad arguments or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

fn exit_status(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 2;
        }
        if let Some(openset::Error::InvalidInput(_) | openset::Error::FoldPlan(_)) =
            cause.downcast_ref()
        {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let seed = cli.seed;
    let verbose = cli.verbose;
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a, seed, verbose),
        Command::Split(a) => commands::split(a, seed, verbose),
        Command::Calibrate(a) => commands::calibrate(*a, seed, verbose),
        Command::Predict(a) => commands::predict(a, verbose),
        Command::Sweep(a) => commands::sweep(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Protocol(a) => commands::protocol(a, seed, verbose),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_status(&err))
        }
    }
}
