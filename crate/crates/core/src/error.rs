use thiserror::Error;

/// Errors raised by the numerical modules and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or inputs; maps to CLI exit code 2.
    #[error("configuration error: {0}")]
    Config(String),

    /// An iterative method stopped before reaching its tolerance; maps to exit code 3.
    #[error("{what} did not converge after {iterations} iterations (last residual {residual:.3e})")]
    NonConvergence {
        what: String,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    /// A numerical certificate failed (e.g. two quadratures disagree); exit code 3.
    #[error("numerical check failed: {0}")]
    Certificate(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn no_convergence(what: impl Into<String>, iterations: usize, history: Vec<f64>) -> Self {
        let residual = history.last().copied().unwrap_or(f64::NAN);
        Error::NonConvergence { what: what.into(), iterations, residual, history }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::NonConvergence { .. } | Error::Certificate(_) => 3,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
