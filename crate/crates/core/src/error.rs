use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// The impedance submatrix of the short-circuited pixel ports cannot be inverted.
    #[error("closed-port impedance submatrix is singular (pivot ratio {pivot_ratio:e})")]
    SingularSubnetwork { pivot_ratio: f64 },

    #[error("pattern matrix has no nonzero singular value")]
    ZeroMatrix,

    /// The coder radiates nothing inside the retained pattern basis.
    #[error("antenna coder produces a numerically zero pattern (norm {norm:e})")]
    ZeroPattern { norm: f64 },

    #[error("stacked channel estimate has rank {rank} < {users} users")]
    RankDeficient { rank: usize, users: usize },

    #[error("precoder subproblem made no feasible improving step in {iterations} iterations")]
    SolverStall { iterations: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error at key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("codebook file {0} does not exist")]
    MissingCodebook(PathBuf),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn dims(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            actual,
        }
    }
}
