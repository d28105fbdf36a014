mod args;
mod commands;
mod error;
mod io;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;

use args::Cli;
use error::{Failure, Kind};

fn report(failure: &Failure, json_errors: bool) -> ExitCode {
    let code = failure.kind.exit_code();
    if json_errors {
        eprintln!(
            "{}",
            json!({ "error": failure.message(), "kind": failure.kind.name(), "exit_code": code })
        );
    } else {
        eprintln!("error: {}", failure.message());
    }
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let json_errors = std::env::args().any(|a| a == "--json-errors");
            if !json_errors {
                let _ = e.print();
                return ExitCode::from(Kind::Usage.exit_code());
            }
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            let first = first.strip_prefix("error: ").unwrap_or(first);
            return report(&Failure::usage(first), true);
        }
    };
    match commands::run(cli.command, cli.jobs) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(&f, cli.json_errors),
    }
}
