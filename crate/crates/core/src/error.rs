use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or inconsistent caller input (shapes, ids, labels, norms).
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("SVD of a {rows}x{cols} matrix did not converge")]
    SvdFailure { rows: usize, cols: usize },

    /// Newton–Schulz residual grew on two consecutive iterations.
    #[error(
        "Newton-Schulz iteration diverged (residuals {residuals:?}); \
         refit from scratch instead of updating incrementally"
    )]
    Divergence { residuals: Vec<f64> },

    #[error(
        "Newton-Schulz iteration did not reach tolerance {tol:e} in {iterations} iterations \
         (final residual {residual:e}); refit from scratch instead of updating incrementally"
    )]
    NotConverged {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("metric `{metric}` is undefined: {reason}")]
    UndefinedMetric {
        metric: &'static str,
        reason: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn dims(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn undefined(metric: &'static str, reason: impl Into<String>) -> Self {
        Error::UndefinedMetric {
            metric,
            reason: reason.into(),
        }
    }

    /// Process exit code used by the command-line tool.
    ///
    /// 1 for bad input, 2 for numerical failure, 3 for an undefined metric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SvdFailure { .. } | Error::Divergence { .. } | Error::NotConverged { .. } => 2,
            Error::UndefinedMetric { .. } => 3,
            _ => 1,
        }
    }
}
