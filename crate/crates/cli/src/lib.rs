//! Command-line front end for the `blobloss` crate.

pub mod args;
mod commands;
pub mod config;
pub mod error;
pub mod table;

use std::ffi::OsString;
use std::io::Write;

use clap::Parser;

use args::{Cli, Command};
use error::{CliError, CliResult};

/// Name of the environment variable that caps the worker thread count.
pub const THREADS_ENV: &str = "BLOBLIB_THREADS";

fn configure_threads() -> CliResult<()> {
    let Some(raw) = std::env::var_os(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .to_str()
        .and_then(|s| s.trim().parse().ok())
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    // A second call in the same process (tests) keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> CliResult<()> {
    match &cli.command {
        Command::Cc(a) => commands::cc(a, out),
        Command::Loss(a) => commands::loss(a, out),
        Command::Eval(a) => commands::eval(a, out),
        Command::Synth(a) => commands::synth(a, out),
        Command::Shapes(a) => commands::shapes(a, out),
        Command::Train(a) => commands::train(a, out),
        Command::Compare(a) => commands::compare(a, out),
    }
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match configure_threads().and_then(|()| dispatch(&cli, out)) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "blobloss: {e}");
            e.exit_code()
        }
    }
}
