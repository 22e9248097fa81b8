use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes, used by the command line front end to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("traces have different lengths ({expected} vs {found})")]
    RaggedTraces { expected: usize, found: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not an SCDT dataset")]
    BadMagic,
    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersionMismatch { expected: u32, found: u32 },
    #[error("checksum mismatch (file truncated or corrupted)")]
    ChecksumMismatch,
    #[error("malformed file: {0}")]
    Format(String),
    #[error("unknown instruction `{0}`")]
    UnknownInstruction(String),
    #[error("instruction {instr} is filed under group {found}, table says {expected}")]
    GroupMismatch {
        instr: String,
        expected: usize,
        found: usize,
    },
    #[error("degenerate standard deviation {0:e}")]
    DegenerateSigma(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("value {0} outside [0, 1]")]
    RangeViolation(f64),
    #[error("requested {requested} features but only {available} available")]
    InsufficientFeatures { requested: usize, available: usize },
    #[error("covariance of class {class} is not positive definite")]
    SingularCovariance { class: usize },
    #[error("class {class} has {count} samples, need at least 2")]
    TooFewSamples { class: usize, count: usize },
    #[error("training data has no samples for group {0}")]
    MissingGroup(usize),
    #[error("coefficient {value} does not fit 16 signed bits at {frac_bits} fraction bits")]
    OverflowRisk { value: f64, frac_bits: u32 },
    #[error("no scores to compare")]
    EmptyScores,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Config { .. } | InvalidArgument(_) => ErrorKind::Config,
            DegenerateSigma(_)
            | SingularCovariance { .. }
            | OverflowRisk { .. }
            | EmptyScores => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
