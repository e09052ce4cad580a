use thiserror::Error;

use crate::config::ConfigError;
use crate::expr::ExprError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("paths are defined on different time grids")]
    GridMismatch,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A path-level computation produced NaN or infinity.
    #[error("non-finite value in {context} at t = {time}")]
    NonFinite { context: String, time: f64 },

    #[error("picard iteration did not reach tolerance after {} iterations (last distance {:e})", distances.len(), distances.last().copied().unwrap_or(f64::NAN))]
    NoConvergence { distances: Vec<f64> },

    #[error(transparent)]
    Expr(#[from] ExprError),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Process exit status for the command-line runner: 1 for bad input,
    /// 2 for an abort during the numerics or while writing results.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidGrid(_) | Error::InvalidArgument(_) => 1,
            Error::Expr(e) if e.is_parse_error() => 1,
            _ => 2,
        }
    }
}
