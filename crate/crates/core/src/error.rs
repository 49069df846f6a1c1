use std::collections::BTreeSet;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown prompt identifier `{0}`")]
    UnknownPrompt(String),

    #[error("unknown response identifier `{0}`")]
    UnknownResponse(String),

    #[error("unknown source identifier `{0}`")]
    UnknownSource(String),

    #[error("support violation: {0}")]
    SupportViolation(String),

    #[error("degenerate support: every response has zero probability for prompt index {prompt}")]
    DegenerateSupport { prompt: usize },

    #[error(
        "no convergence after {iterations} iterations: gradient norm {grad_norm:.3e} > tol {tol:.3e}"
    )]
    Convergence {
        grad_norm: f64,
        tol: f64,
        iterations: usize,
    },

    #[error("sequential alignment failed on dataset {step}: {source}")]
    SequentialStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("rank-deficient regression design: {0}")]
    RankDeficient(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("utility oracle failed on coalition {coalition:?}: {source}")]
    Oracle {
        coalition: BTreeSet<usize>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
