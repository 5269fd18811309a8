mod args;
mod config;
mod run;

use std::process::ExitCode;

use clap::error::ErrorKind as ClapKind;
use clap::Parser;
use pictext_core::ErrorKind;

use crate::args::Cli;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// One JSON object on a single stderr line, for scripts.
fn report(kind: &str, code: u8, message: &str) {
    eprintln!("{}", serde_json::json!({ "error": { "kind": kind, "code": code, "message": message } }));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ClapKind::DisplayHelp | ClapKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            report("usage", EXIT_USAGE, e.render().to_string().lines().next().unwrap_or("usage error"));
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = match e.kind() {
                ErrorKind::Usage => ("usage", EXIT_USAGE),
                ErrorKind::Data => ("data", EXIT_DATA),
                ErrorKind::Numeric => ("numeric", EXIT_NUMERIC),
            };
            eprintln!("error: {e}");
            report(kind, code, &e.to_string());
            ExitCode::from(code)
        }
    }
}
