use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent user-supplied settings.
    #[error("config error: {0}")]
    Config(String),

    /// A serialized artifact could not be decoded.
    #[error("{format} parse error at line {line}: {msg}")]
    Parse { format: &'static str, line: usize, msg: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("root bracketing failed on interval ({lo:e}, {hi:e}): {msg}")]
    RootBracket { lo: f64, hi: f64, msg: String },

    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("point ({x}, {y}) lies outside the domain [0, {lx}] x [0, {ly}]")]
    OutsideDomain { x: f64, y: f64, lx: f64, ly: f64 },

    #[error("refusing to overwrite existing artifact {0}")]
    AlreadyExists(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(format: &'static str, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            format,
            line,
            msg: msg.into(),
        }
    }

    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::RootBracket { .. } | Error::SolverDiverged { .. } | Error::NonFinite(_))
    }
}
