use thiserror::Error;

/// Errors produced anywhere in the analysis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MfpcaError {
    #[error("curves are defined on different grids")]
    GridMismatch,
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("visit {visit} has no observed subjects")]
    EmptyVisit { visit: usize },
    #[error("no subject has two or more observed visits")]
    NoWithinPairs,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("shape error: {0}")]
    ShapeError(String),
    #[error("matrix is not symmetric (max deviation {0:e})")]
    AsymmetricInput(f64),
    #[error("no positive variance to decompose")]
    NoVariance,
    #[error("invalid variance: {0}")]
    InvalidVariance(String),
    #[error("singular system for subject {subject}")]
    SingularSystem { subject: usize },
    #[error("index out of range: {0}")]
    IndexError(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("complete or quasi-complete separation detected")]
    SeparationDetected,
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("band power undefined in window {window}")]
    BandPowerUndefined { window: usize },
    #[error("duplicate row at line {line}")]
    DuplicateRow { line: usize },
    #[error("value t = {t} at line {line} lies outside [0, 1]")]
    RangeError { line: usize, t: f64 },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for MfpcaError {
    fn from(e: std::io::Error) -> Self {
        MfpcaError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, MfpcaError>;
