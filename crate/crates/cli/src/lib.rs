//! `semcommit`: scripted checks and edits of an intent specification, and
//! the JSON service behind the review UI.

pub mod commands;
pub mod error;
pub mod files;
pub mod server;

use clap::Parser;
use tracing_subscriber::EnvFilter;

pub use commands::Cli;
pub use error::{CliError, EXIT_CONFLICTS, EXIT_IO, EXIT_OK, EXIT_PROVIDER, EXIT_USAGE};

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
    match cli.execute() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
