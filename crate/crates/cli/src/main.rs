//! `cedst` command line: train, eval, mask, synth, inspect.
//!
//! Exit status 0 on success, 1 on usage or validation errors, 2 on runtime
//! failures.

mod args;
mod commands;
mod output;

use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;

/// An input problem the user can fix: bad flags, missing paths, bad values.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Invalid>().is_some() || err.downcast_ref::<toml::de::Error>().is_some() {
        return 1;
    }
    match err.downcast_ref::<cedst::Error>() {
        Some(
            cedst::Error::Parse { .. }
            | cedst::Error::Schema { .. }
            | cedst::Error::Config(_)
            | cedst::Error::Contract(_)
            | cedst::Error::VocabMismatch { .. }
            | cedst::Error::Json(_),
        ) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
