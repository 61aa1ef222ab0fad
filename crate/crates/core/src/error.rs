use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Vectors that must line up do not.
    #[error("input shape mismatch: {0}")]
    InputShape(String),

    /// A value is outside the domain an operation accepts.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// Non-finite intermediate values (overflowing kernel ratios and the like).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// The deconvolution density estimate is non-positive on the whole grid.
    #[error("estimation failure: {0}")]
    EstimationFailure(String),

    #[error("degenerate variance: {0}")]
    DegenerateVariance(String),

    /// The corrected moment matrix of the pilot regression is singular.
    #[error("pilot regression failed: {0}")]
    PilotFailure(String),

    #[error("bandwidth selection failed: {0}")]
    Selection(String),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code for the command-line front end:
    /// 2 usage, 3 data, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::InvalidInput(_) | Error::Domain(_) => 2,
            Error::InputShape(_) | Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
            Error::Numeric(_)
            | Error::EstimationFailure(_)
            | Error::DegenerateVariance(_)
            | Error::PilotFailure(_)
            | Error::Selection(_)
            | Error::Experiment(_) => 4,
        }
    }
}
