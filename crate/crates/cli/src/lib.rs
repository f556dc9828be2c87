//! Experiment runner behind the `gauss-bubbles` binary.
//!
//! An [`ExperimentSpec`] names a command and its parameters. [`run`]
//! validates it, computes, and returns the JSON summary together with the
//! report files to write; nothing touches the filesystem until everything
//! has succeeded.

pub mod regression;
pub mod run;
pub mod spec;

pub use run::{run, Outcome};
pub use spec::ExperimentSpec;

use gauss_bubbles::Error;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Library(Error),
    Io(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Library(e) => write!(f, "{e}"),
            Self::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Self::Usage(m),
            other => Self::Library(other),
        }
    }
}

impl CliError {
    /// 1 usage and i/o, 2 failed preconditions and domain errors, 3
    /// numerical precision, capacity or convergence failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Io(_) => 1,
            Self::Library(e) => match e {
                Error::Precision(_)
                | Error::Capacity { .. }
                | Error::Calibration { .. }
                | Error::Optimization(_) => 3,
                Error::Config(_) | Error::Json(_) | Error::Csv(_) => 1,
                _ => 2,
            },
        }
    }
}
