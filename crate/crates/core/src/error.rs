use thiserror::Error;

use crate::units::Unit;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot convert {from} to {to}: incompatible dimensions")]
    IncompatibleDimensions { from: Unit, to: Unit },

    #[error("beam waist must be positive, got {0} m")]
    NonPositiveWaist(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("|M| = {m} exceeds J = {j}")]
    Domain { j: u32, m: i32 },

    #[error("{0:?} branch has no line-strength formula")]
    UnsupportedBranch(crate::system::Branch),

    #[error("steady-state matrix is singular (transit rate must be positive)")]
    SingularSystem,

    #[error(
        "velocity quadrature not converged: refinement changed the result by {deviation:.3e} (tolerance {tolerance:.3e})"
    )]
    QuadratureNotConverged { deviation: f64, tolerance: f64 },

    #[error("no dip between the two largest peaks")]
    NoDipFound,

    #[error("need two peaks, found {0}")]
    FewerThanTwoPeaks(usize),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid value for `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("unit error for `{key}`: {message}")]
    Unit { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Short machine-readable class name, used for JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::IncompatibleDimensions { .. } => "IncompatibleDimensions",
            Error::NonPositiveWaist(_) => "NonPositiveWaist",
            Error::InvalidInput(_) => "InvalidInput",
            Error::Domain { .. } => "DomainError",
            Error::UnsupportedBranch(_) => "UnsupportedBranch",
            Error::SingularSystem => "SingularSystem",
            Error::QuadratureNotConverged { .. } => "QuadratureNotConverged",
            Error::NoDipFound => "NoDipFound",
            Error::FewerThanTwoPeaks(_) => "FewerThanTwoPeaks",
            Error::Parse { .. } => "ParseError",
            Error::Validation { .. } => "ValidationError",
            Error::Unit { .. } => "UnitError",
            Error::Io(_) => "IoError",
            Error::Json(_) => "JsonError",
            Error::Csv(_) => "CsvError",
        }
    }
}
