use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed record: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("non-monotonic time at sample {index}: t = {t} after {prev}")]
    NonMonotonicTime { index: usize, t: f64, prev: f64 },

    #[error("irregular sample spacing at sample {index}: dt = {dt}, expected {expected}")]
    IrregularSpacing { index: usize, dt: f64, expected: f64 },

    #[error("length mismatch: {states} states but {lead} lead observations")]
    LengthMismatch { states: usize, lead: usize },

    #[error("unsupported sample rate {0} Hz (only 10 Hz logs are accepted)")]
    UnsupportedRate(f64),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty distribution")]
    EmptyDistribution,

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("too few drivers: need at least 2, got {0}")]
    TooFewDrivers(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("simulation diverged at step {step}")]
    SimulationDiverged { step: usize },

    #[error("checkpoint version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown {kind} `{id}`")]
    Unknown { kind: &'static str, id: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Coarse classification used by the command line for exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonFinite(_) | Error::Divergence { .. } | Error::SimulationDiverged { .. } => {
                ErrorKind::Numeric
            }
            Error::Io(_) => ErrorKind::Io,
            _ => ErrorKind::Input,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Input,
    Numeric,
    Io,
}

pub type Result<T> = std::result::Result<T, Error>;
