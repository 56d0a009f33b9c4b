//! `featsel`: command-line front end for the selection pipeline.
//!
//! Exit codes: 0 success, 2 configuration, 3 data, 4 backend, 5 internal. Every
//! failure also prints a one-line JSON error record on stderr.

mod args;
mod commands;
mod error;
mod manifest;
mod settings;

use clap::error::ErrorKind;
use clap::Parser;

use crate::args::Cli;
use crate::error::CliError;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                let _ = e.print();
                std::process::exit(0);
            }
            _ => {
                let _ = e.print();
                let err = CliError::config(e.render().to_string().trim().to_string());
                eprintln!("{}", err.record());
                std::process::exit(err.class.exit_code());
            }
        },
    };
    if let Err(err) = commands::run(cli.command) {
        log::error!("{err}");
        eprintln!("{}", err.record());
        std::process::exit(err.class.exit_code());
    }
}
