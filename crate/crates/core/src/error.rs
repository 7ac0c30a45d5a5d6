use thiserror::Error;

use crate::utility::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    Dimension { what: &'static str, expected: usize, got: usize },

    #[error("series length mismatch: prices have {prices} rows, renewable has {renewable}")]
    LengthMismatch { prices: usize, renewable: usize },

    #[error("value {value} outside domain [{lo}, {hi}] for {what}")]
    Domain { what: &'static str, value: f64, lo: f64, hi: f64 },

    #[error("infeasible decision: {0:?}")]
    Infeasible(Vec<Violation>),

    #[error("rank-deficient design matrix (rank {rank} < {needed})")]
    RankDeficient { rank: usize, needed: usize },

    #[error("constraint set is infeasible (max violation {0:.3e})")]
    InfeasibleConstraints(f64),

    #[error("objective is unbounded over the feasible region")]
    Unbounded,

    #[error("solver did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("grid oracle limited to dimension <= 4, got {0}")]
    OracleDimension(usize),

    #[error("enumeration too large: {0} combinations exceeds limit {1}")]
    TooManyCombinations(f64, f64),

    #[error("no feasible point found during enumeration")]
    EmptyFeasibleSet,

    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_stage(self, stage: usize) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            other => Error::Stage { stage, source: Box::new(other) },
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Error {
        Error::Parse { context: context.into(), message: message.to_string() }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Error {
        Error::Io { path: path.display().to_string(), source }
    }
}
