use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Variants are grouped into coarse classes by [`Error::class`], which the
/// command-line front end maps onto distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("value {value} at flat index {index} of {what} is outside [0, 1]")]
    RangeViolation {
        what: &'static str,
        index: usize,
        value: f32,
    },
    #[error("probability row {row} sums to {sum}, expected 1 within {tolerance}")]
    RowSumViolation {
        row: usize,
        sum: f64,
        tolerance: f64,
    },
    #[error("label value {value} at pixel {index} is not one of 0, 1, 255")]
    LabelViolation { index: usize, value: u8 },
    #[error("query index {index} appears more than once")]
    DuplicateIndex { index: usize },
    #[error("query index {index} is out of range for {n_queries} queries")]
    IndexOutOfRange { index: usize, n_queries: usize },
    #[error("bundles disagree on the number of queries: expected {expected}, found {found}")]
    InconsistentQueryCount { expected: usize, found: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperParams(String),
    #[error("at least one of the accept and reject stages must be enabled")]
    InvalidToggles,
    #[error("invalid histogram bins: {0}")]
    InvalidBins(String),
    #[error("threshold statistics use different grids ({left} vs {right} bins)")]
    GridMismatch { left: usize, right: usize },
    #[error("no positive (anomaly) pixels to evaluate")]
    NoPositives,
    #[error("evaluation needs at least one positive and one negative pixel")]
    DegenerateLabels,
    #[error("infeasible synthetic scene: {0}")]
    InfeasibleSpec(String),

    #[error("bad magic bytes {found:?}, expected \"MKIO\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported bundle version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("{0} unexpected trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("malformed graymap header: {0}")]
    MalformedHeader(String),
    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Format,
    Validation,
    Metric,
    Config,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Io { .. } => ErrorClass::Io,
            BadMagic { .. }
            | UnsupportedVersion(_)
            | TruncatedPayload { .. }
            | TrailingBytes(_)
            | MalformedHeader(_) => ErrorClass::Format,
            DimensionMismatch(_)
            | RangeViolation { .. }
            | RowSumViolation { .. }
            | LabelViolation { .. }
            | DuplicateIndex { .. }
            | IndexOutOfRange { .. }
            | InconsistentQueryCount { .. } => ErrorClass::Validation,
            NoPositives | DegenerateLabels | GridMismatch { .. } => ErrorClass::Metric,
            InvalidHyperParams(_)
            | InvalidToggles
            | InvalidBins(_)
            | InfeasibleSpec(_)
            | Config { .. } => ErrorClass::Config,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
