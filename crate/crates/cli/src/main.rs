//! `meshsplat` command-line driver.
//!
//! Exit status: 0 on success, 2 on usage or configuration errors, 3 when an
//! edit prompt is refused or selects nothing, 1 on any other failure
//! (including Ctrl-C, which stops training after writing a checkpoint).

mod args;
mod commands;
mod sheet;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::Parser;
use meshsplat::Error;

use crate::args::{Cli, Command};

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    /// Stopped on request; the checkpoint in the directory is current.
    Interrupted(PathBuf),
    /// A verification command ran but its check failed.
    Check(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::Refusal(_) | Error::NoTarget(_)) => 3,
            CliError::Core(
                Error::Config(_) | Error::InvalidParameter(_) | Error::DimensionMismatch(_),
            ) => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Interrupted(dir) => {
                write!(f, "interrupted; checkpoint written to {}", dir.display())
            }
            CliError::Check(msg) => write!(f, "check failed: {msg}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();

    let cancel = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&cancel);
    if let Err(e) = ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)) {
        log::warn!("could not install the Ctrl-C handler: {e}");
    }

    let result = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Fit(a) => commands::fit(a, &cancel),
        Command::Render(a) => commands::render_views(a),
        Command::Edit(a) => commands::edit(a, &cancel),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
