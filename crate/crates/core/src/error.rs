use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid group order {0}: must be at least 1")]
    InvalidOrder(usize),
    #[error("unknown group `{0}`")]
    UnknownGroup(String),
    #[error("representations are defined over different groups ({0} vs {1})")]
    GroupMismatch(String, String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("direction is undefined for a zero vector")]
    UndefinedDirection,
    #[error("non-finite value encountered in {0}")]
    Numeric(&'static str),
    #[error("ill-posed cost: (R + BᵀPB) is not positive definite")]
    IllPosedCost,
    #[error("invalid horizon {0}")]
    InvalidHorizon(usize),
    #[error("planning failed: no finite trajectory return")]
    PlanningFailure,
    #[error("symmetry violation: {0}")]
    SymmetryViolation(String),
    #[error("training diverged at update {update}: {detail}")]
    TrainingFailure { update: usize, detail: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: usize, got: usize) -> Self {
        Error::Shape { expected, got }
    }
}
