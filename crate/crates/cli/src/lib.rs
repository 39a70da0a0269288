//! Library behind the `flowforge` binary.

pub mod args;
pub mod commands;
pub mod suites;

use std::io::Write;

use args::{Cli, Command};
use commands::CliResult;

/// Dispatches a parsed command line.
pub fn run(cli: &Cli, out: &mut impl Write) -> CliResult {
    match &cli.command {
        Command::Train(a) => commands::train(a, out).map(drop),
        Command::Eval(a) => commands::eval(a, out).map(drop),
        Command::Sample(a) => commands::sample(a, out).map(drop),
        Command::Check(a) => commands::check(a, out),
        Command::Bench(a) => commands::bench(a, out),
    }
}
