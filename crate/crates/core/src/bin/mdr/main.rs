//! `mdr` command-line tool. Exit codes: 0 success, 1 runtime error, 2 usage error.

mod args;
mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn parse(raw: Vec<OsString>) -> Result<args::Cli, ExitCode> {
    let merged = match config::find_config(&raw) {
        Some(path) => {
            let path = PathBuf::from(path);
            let loaded = config::load(&path).and_then(|cfg| config::merge(raw, &cfg));
            match loaded {
                Ok(m) => m,
                Err(msg) => {
                    eprintln!("error: {msg}");
                    return Err(ExitCode::from(2));
                }
            }
        }
        None => raw,
    };
    args::Cli::try_parse_from(merged).map_err(|e| {
        let _ = e.print();
        ExitCode::from(if e.use_stderr() { 2 } else { 0 })
    })
}

fn main() -> ExitCode {
    let cli = match parse(std::env::args_os().collect()) {
        Ok(c) => c,
        Err(code) => return code,
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
