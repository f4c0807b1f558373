use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible grids: {0}")]
    IncompatibleGrids(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("coercivity lost: {0}")]
    CoercivityLost(String),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("relaxation spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("infeasible envelope: {0}")]
    InfeasibleEnvelope(String),

    #[error("enumeration budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("lower bound must be positive, got {0}")]
    NonpositiveLower(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
