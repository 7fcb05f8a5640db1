use thiserror::Error;

use crate::diagnostics::SolveDiagnostics;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix has no rows")]
    Empty,
    #[error("matrix is not square: row {row} has {len} entries, expected {expected}")]
    NotSquare { row: usize, len: usize, expected: usize },
    #[error("entry ({row}, {col}) = {value} is negative")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("n = {n} exceeds the limit of {limit} for {what}")]
    TooLarge { what: &'static str, n: usize, limit: usize },
    #[error("support admits no perfect matching")]
    NoPerfectMatching,
    #[error("{what} requires a strictly positive matrix")]
    NotPositive { what: &'static str },
    #[error("row {0} has no positive entry")]
    ZeroRow(usize),
    #[error("argument must be strictly positive and finite (index {0})")]
    NonPositiveArgument(usize),
    #[error("not doubly stochastic: {0}")]
    NotDoublyStochastic(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("no feasible assignment: every completion uses a forbidden cell")]
    NoFeasibleAssignment,
    #[error("{solver} did not converge after {} iterations (residual {:e})", .diagnostics.iterations, .diagnostics.final_residual)]
    NotConverged { solver: &'static str, diagnostics: SolveDiagnostics },
    #[error("entry ({row}, {col}) lies on the boundary of [0, 1] where the gradient is unbounded")]
    Boundary { row: usize, col: usize },
    #[error("objective is unbounded below on this support")]
    Unbounded,
    #[error("generator gave up after {attempts} attempts without a perfect matching")]
    RetriesExhausted { attempts: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub fn is_convergence_failure(&self) -> bool {
        matches!(self, Error::NotConverged { .. })
    }
}
