use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported dimension {0} (expected 2 or 3)")]
    UnsupportedDimension(usize),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid hierarchy: {0}")]
    InvalidHierarchy(String),

    #[error("coarse space {space} is not available in {dim}D")]
    UnsupportedCoarseSpace { space: String, dim: usize },

    #[error("degenerate constraint: {0}")]
    DegenerateConstraint(String),

    #[error("level {level} out of range 1..={max}")]
    LevelOutOfRange { level: usize, max: usize },

    #[error("substructures at level {0} are not congruent")]
    NotCongruent(usize),

    #[error("factorization breakdown: {0}")]
    Factorization(String),

    #[error("constrained problem is not positive definite on the constraint kernel: {0}")]
    NotPositiveDefinite(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("definiteness violated: {name} = {value:e}")]
    Definiteness { name: &'static str, value: f64 },

    #[error("oracle size cap exceeded: {n} > {cap}")]
    OracleCap { n: usize, cap: usize },

    #[error("eigenvalue computation failed: {0}")]
    Eigen(String),

    #[error("empty input: {0}")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
