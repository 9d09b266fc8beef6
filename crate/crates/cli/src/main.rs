//! `narrative` command-line tool.
//!
//! Exit status is 0 on success, 1 when a command ran but some or all of its
//! work failed, and 2 for usage, configuration and missing-input errors.

mod args;
mod cmd;
mod context;
mod error;

use std::process::ExitCode;

use clap::Parser;
use tracing::Level;

use args::{Cli, Command};
use context::Context;
use error::CliError;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => Level::WARN,
        1 => Level::INFO,
        _ => Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    let ctx = || Context::new(&cli.global);
    let outcome = match &cli.command {
        Command::Chat(args) => {
            cmd::chat::run(&ctx()?, args)?;
            None
        }
        Command::Simulate(args) => Some(cmd::simulate::run(&ctx()?, args)?),
        Command::Annotate(args) => Some(cmd::batch::annotate(&ctx()?, args)?),
        Command::Evaluate(args) => Some(cmd::batch::evaluate(&ctx()?, args)?),
        Command::Report(args) => Some(cmd::report::run(args)?),
        Command::BuildRepo(args) => {
            cmd::repo::build(&ctx()?, args)?;
            None
        }
        Command::Serve(args) => {
            cmd::serve::run(&ctx()?, args)?;
            None
        }
        Command::IngestProfiles(args) => {
            cmd::repo::ingest(args)?;
            None
        }
    };
    match outcome {
        Some(o) => {
            if o.failed > 0 {
                eprintln!("{} of {} failed", o.failed, o.failed + o.succeeded);
            }
            Ok(o.exit_code())
        }
        None => Ok(ExitCode::SUCCESS),
    }
}
