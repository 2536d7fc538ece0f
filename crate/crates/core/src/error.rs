use thiserror::Error;

/// Errors raised by the solver pipeline.
///
/// Each variant belongs to one [`ErrorClass`], which the command-line front
/// end maps onto its exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error(
        "coupling blocks ({g}, {gp}) violate the adjoint relation (max deviation {deviation:e})"
    )]
    NonHermitian { g: usize, gp: usize, deviation: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("state has zero norm: {0}")]
    ZeroState(String),

    #[error("eigendecomposition failed: {0}")]
    EigenFailure(String),

    #[error("spectral parameter {eta} lies within {threshold:e} of pole {pole}")]
    PoleProximity { eta: f64, pole: f64, threshold: f64 },

    #[error("secular function evaluated exactly at pole {eta}")]
    PoleEvaluation { eta: f64 },

    #[error("no sign change between {lo} and {hi} for channel {channel}")]
    BracketFailure { channel: usize, lo: f64, hi: f64 },

    #[error("no eigenvalue of the effective channel problem within {tolerance:e} of root {root} (nearest {nearest})")]
    ChannelSolveFailure {
        root: f64,
        nearest: f64,
        tolerance: f64,
    },

    #[error("every realisation amplitude is zero")]
    AllZero,

    #[error("spectra differ in size ({left} vs {right})")]
    CountMismatch { left: usize, right: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("i/o error: {0}")]
    Io(String),
}

/// Coarse grouping of [`Error`] variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input: parse, schema or model validation failures.
    Validation,
    /// The numerics did not produce an answer.
    Numerical,
    /// Two independent routes disagree.
    Oracle,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::DimensionMismatch(_)
            | Error::NonHermitian { .. }
            | Error::NonFinite(_)
            | Error::ZeroState(_)
            | Error::Parse(_)
            | Error::Schema(_)
            | Error::Io(_) => ErrorClass::Validation,
            Error::CountMismatch { .. } => ErrorClass::Oracle,
            _ => ErrorClass::Numerical,
        }
    }

    /// Variant name, used as the `kind` field of machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NonHermitian { .. } => "NonHermitian",
            Error::NonFinite(_) => "NonFinite",
            Error::ZeroState(_) => "ZeroState",
            Error::EigenFailure(_) => "EigenFailure",
            Error::PoleProximity { .. } => "PoleProximity",
            Error::PoleEvaluation { .. } => "PoleEvaluation",
            Error::BracketFailure { .. } => "BracketFailure",
            Error::ChannelSolveFailure { .. } => "ChannelSolveFailure",
            Error::AllZero => "AllZero",
            Error::CountMismatch { .. } => "CountMismatch",
            Error::Parse(_) => "ParseError",
            Error::Schema(_) => "SchemaError",
            Error::Io(_) => "IoError",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
