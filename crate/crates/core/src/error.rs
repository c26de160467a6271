use thiserror::Error;

use crate::estimate::FitResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model specification: {0}")]
    Model(String),

    #[error("parameter outside its domain: {0}")]
    Domain(String),

    #[error("invalid scale: {0}")]
    Scale(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("parameter transform failed: {0}")]
    Transform(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("too few batches for covariance estimation: got {batches}, need at least {required}")]
    Coverage { batches: usize, required: usize },

    #[error("finite-difference step for `{param}` crosses the parameter boundary")]
    Boundary { param: String },

    #[error("B = A'ΩA is singular; deficient directions: {}", directions.join(", "))]
    Rank { directions: Vec<String> },

    #[error("no start converged (best objective {:.6e})", best.objective)]
    NonConvergence { best: Box<FitResult> },

    #[error("bootstrap unreliable: {dropped} of {total} refits failed to converge")]
    Bootstrap { dropped: usize, total: usize },

    #[error("study `{study}` at T = {n}: {failed} of {total} fits failed to converge")]
    Study {
        study: String,
        n: usize,
        failed: usize,
        total: usize,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag, used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Model(_) => "model",
            Error::Domain(_) => "domain",
            Error::Scale(_) => "scale",
            Error::Input(_) => "input",
            Error::Transform(_) => "transform",
            Error::Shape(_) => "shape",
            Error::Coverage { .. } => "coverage",
            Error::Boundary { .. } => "boundary",
            Error::Rank { .. } => "rank",
            Error::NonConvergence { .. } => "non_convergence",
            Error::Bootstrap { .. } => "bootstrap",
            Error::Study { .. } => "study",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
