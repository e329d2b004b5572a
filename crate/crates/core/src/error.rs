//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by oracle, data, kernel, estimation and experiment code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("primal solution does not exist (range residual {residual:.3e})")]
    PrimalInfeasible { residual: f64 },

    #[error("dual solution does not exist (range residual {residual:.3e})")]
    DualInfeasible { residual: f64 },

    #[error("overlap violation: P(D=1 | state {state}) = {prob}")]
    Overlap { state: usize, prob: f64 },

    #[error("ill-conditioned adversary system")]
    IllConditioned,

    #[error("saddle solve did not converge after {iterations} alternations (last change {last_change:.3e})")]
    NonConvergence {
        iterations: usize,
        last_change: f64,
        /// Coefficients of the last iterate.
        last_coeffs: Vec<f64>,
    },

    #[error("version space empty; increase mu_mult")]
    EmptyVersionSpace,

    #[error("iterate {index}: {source}")]
    Iterate {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Strips iterate and fold annotations to expose the underlying failure.
    pub fn root(&self) -> &Error {
        match self {
            Error::Iterate { source, .. } | Error::Fold { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
