//! Command-line front end: corpus generation, fitting, quantisation,
//! probing, the three experiments, and report formatting.
//!
//! [`run`] parses arguments and executes one subcommand; the binary only maps
//! its error to an exit code.

pub mod args;
pub mod commands;
pub mod model;
pub mod report;

use std::path::PathBuf;

use clap::Parser;
use tonequant_core::Error;

pub use args::Cli;

/// Exit code for success.
pub const EXIT_OK: i32 = 0;
/// Exit code for unrecoverable failures without a more specific code.
pub const EXIT_FAILURE: i32 = 1;
/// Exit code for usage errors: bad flags, specs, names or input formats.
pub const EXIT_USAGE: i32 = 2;
/// Exit code for filesystem failures.
pub const EXIT_IO: i32 = 3;
/// Exit code for numerical divergence during training.
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core(e) if e.is_io() => EXIT_IO,
            CliError::Core(e) if e.is_divergence() => EXIT_DIVERGENCE,
            CliError::Core(e) => match root_cause(e) {
                Error::InvalidConfig(_)
                | Error::UnknownLevel { .. }
                | Error::Manifest(_)
                | Error::UnknownSplit(_)
                | Error::Format { .. }
                | Error::Truncated { .. }
                | Error::Alignment { .. }
                | Error::Csv(_)
                | Error::Json(_) => EXIT_USAGE,
                _ => EXIT_FAILURE,
            },
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

fn root_cause(e: &Error) -> &Error {
    match e {
        Error::Representation { source, .. } => root_cause(source),
        other => other,
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Parses `args` (including the program name) and runs the subcommand.
/// Help and version requests print and return `Ok`.
pub fn run<I, T>(args: I) -> CliResult<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.render().to_string())),
    };
    commands::execute(cli)
}
