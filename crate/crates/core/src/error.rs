use thiserror::Error;

/// Errors raised anywhere in the identification pipeline.
#[derive(Debug, Error)]
pub enum CovMatchError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("matrix (I - S) is singular or too ill-conditioned (cond = {cond:.3e})")]
    Singular { cond: f64 },

    #[error("rank-deficient covariance: eigenvalue {value:.3e} below floor {floor:.3e}")]
    RankDeficient { value: f64, floor: f64 },

    #[error("orthogonal matrix has non-positive determinant ({det:.3e}); logarithm is not real")]
    Parity { det: f64 },

    #[error("rotation angle {angle:.12} too close to pi; principal logarithm is ambiguous")]
    BranchAmbiguity { angle: f64 },

    #[error("problem size {n} exceeds the enumeration budget ({max})")]
    Budget { n: usize, max: usize },

    #[error("graph generation failed after {retries} attempts: {reason}")]
    Generation { retries: usize, reason: String },

    #[error("covariance does not fit the model: {0}")]
    ModelMismatch(String),

    #[error("variable {0} has zero variance")]
    DegenerateVariable(usize),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl CovMatchError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            CovMatchError::Parameter(_)
            | CovMatchError::Input(_)
            | CovMatchError::Io(_)
            | CovMatchError::Json(_)
            | CovMatchError::Csv(_)
            | CovMatchError::Config(_) => 2,
            CovMatchError::Budget { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CovMatchError>;
