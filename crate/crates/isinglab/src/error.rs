//! Crate-wide error type and the exit-code classification used by the CLI.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// How a failure should be reported by a command-line pipeline.
///
/// `Parameter` failures (exit code 2) mean the request itself was malformed:
/// bad dimensions, out-of-range knobs, unreadable input files. `Numerical`
/// failures (exit code 3) mean the request was well-formed but the computation
/// could not be completed: singular correlation matrices, non-converging
/// iterations, diverging updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitClass {
    Parameter,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed request: sizes, ranges, missing inputs.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Request exceeds a hard capacity limit (e.g. exhaustive enumeration).
    #[error("capacity exceeded: {0}")]
    Capacity(String),

    /// Input is outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A linear system could not be solved reliably.
    #[error("singular matrix in {what} (condition number {condition:.3e})")]
    Singular { what: String, condition: f64 },

    /// An iterative scheme stopped without reaching its tolerance.
    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        residual: f64,
    },

    /// An iterative scheme moved away from its target.
    #[error("{what} diverged: {detail}")]
    Divergence { what: String, detail: String },

    /// A file could not be parsed as the expected format.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Map the failure onto the process exit code contract.
    pub fn exit_class(&self) -> ExitClass {
        match self {
            Error::Parameter(_)
            | Error::Capacity(_)
            | Error::Domain(_)
            | Error::Format(_)
            | Error::Io(_)
            | Error::Json(_) => ExitClass::Parameter,
            Error::Singular { .. }
            | Error::NonConvergence { .. }
            | Error::Divergence { .. } => ExitClass::Numerical,
        }
    }
}
