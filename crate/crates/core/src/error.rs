use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// The CLI maps [`Error::is_numerical`] failures to exit code 3 and
/// everything else to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: expected {expected}, got {got} ({context})")]
    Shape {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("density is not available for {0}")]
    UnsupportedDensity(String),

    #[error("velocity distribution undefined: marginal density {density:e} at x_t={x_t:?}, t={t}")]
    UndefinedRegion { x_t: Vec<f64>, t: f64, density: f64 },

    #[error("training diverged at iteration {iteration}: {reason}")]
    Training { iteration: usize, reason: String },

    #[error("non-finite values in {0}")]
    NonFinite(String),

    #[error("ODE solver gave up after {steps} steps at tau={tau} (last error estimate {error_estimate:e})")]
    Solver {
        steps: usize,
        tau: f64,
        error_estimate: f64,
    },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numbers rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Training { .. } | Error::NonFinite(_) | Error::Solver { .. }
        )
    }

    pub(crate) fn shape(expected: usize, got: usize, context: &'static str) -> Self {
        Error::Shape { expected, got, context }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
