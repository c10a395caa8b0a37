//! `choroid` command-line entry point.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 when processing fails.

mod args;
mod commands;
mod config;
mod error;
mod files;

use std::ffi::OsString;
use std::process::ExitCode;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser};

use args::{Cli, Command};
use error::CliError;

fn init_logging(json: bool) {
    let filter = tracing_subscriber::EnvFilter::try_from_env("CHOROID_LOG")
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(if json { "info" } else { "warn" }));
    let builder = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr);
    let _ = if json {
        builder.json().with_current_span(false).try_init()
    } else {
        builder.compact().without_time().try_init()
    };
}

fn name(c: &Command) -> &'static str {
    match c {
        Command::Trace(_) => "trace",
        Command::Vessels(_) => "vessels",
        Command::Measure(_) => "measure",
        Command::Map(_) => "map",
        Command::Peri(_) => "peri",
        Command::Compare(_) => "compare",
        Command::Phantom(_) => "phantom",
        Command::Serve(_) => "serve",
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Trace(a) => commands::trace(a),
        Command::Vessels(a) => commands::vessels(a),
        Command::Measure(a) => commands::measure(a),
        Command::Map(a) => commands::map(a),
        Command::Peri(a) => commands::peri(a),
        Command::Compare(a) => commands::compare(a),
        Command::Phantom(a) => commands::phantom(a),
        Command::Serve(a) => commands::serve(a),
    }
}

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let subcommands: Vec<String> = Cli::command()
        .get_subcommands()
        .map(|s| s.get_name().to_string())
        .collect();
    let names: Vec<&str> = subcommands.iter().map(String::as_str).collect();
    let argv = match config::expand(argv, &names) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code());
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    init_logging(cli.json_log);
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
            tracing::warn!(error = %e, "thread pool already initialised");
        }
    }
    let command = name(&cli.command);
    tracing::info!(command, jobs = cli.jobs, "start");
    let started = Instant::now();
    match dispatch(&cli) {
        Ok(()) => {
            tracing::info!(command, elapsed_ms = started.elapsed().as_millis() as u64, "done");
            ExitCode::SUCCESS
        }
        Err(e) => {
            if cli.json_log {
                tracing::error!(command, error = %e, "failed");
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code())
        }
    }
}
