use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("unknown tape node {0}")]
    UnknownNode(usize),

    #[error("non-finite gradient in parameter block {block}")]
    NonFiniteGradient { block: String },

    #[error("input has {found} components, expected {expected}")]
    Dimension { expected: usize, found: usize },

    #[error(
        "{coord} = {value} lies outside the trained domain [{lo}, {hi}]; retrain or transfer onto a domain that covers it"
    )]
    OutOfDomain {
        coord: String,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("variance must be non-negative, got {0}")]
    NegativeVariance(f64),

    #[error("time {t} is outside the schedule coverage [{start}, {end}]")]
    OutsideSchedule { t: f64, start: f64, end: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing required field `{0}`")]
    MissingField(String),

    #[error("input layout mismatch: expected {expected:?}, found {found:?}")]
    LayoutMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("non-finite residual at point {point:?}")]
    NonFiniteResidual { point: Vec<f64> },

    #[error("empty sample set")]
    EmptySamples,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {kind}")]
    Format { path: PathBuf, kind: FormatError },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("bad magic bytes")]
    Magic,
    #[error("unsupported format version {found} (this build reads {supported})")]
    Version { found: u32, supported: u32 },
    #[error("file truncated")]
    Truncated,
    #[error("checksum mismatch")]
    Checksum,
    #[error("malformed header: {0}")]
    Header(String),
    #[error("weight count mismatch: expected {expected}, found {found}")]
    WeightCount { expected: usize, found: usize },
    #[error("non-finite weight in block {0}")]
    NonFiniteWeight(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, kind: FormatError) -> Self {
        Error::Format {
            path: path.into(),
            kind,
        }
    }
}
