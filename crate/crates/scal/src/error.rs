use std::path::PathBuf;

/// Errors produced by the library. CLI maps these to exit code 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("field out of range at line {line}: {reason}")]
    FieldOutOfRange { line: u64, reason: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("class {class} has {count} instances, cannot stratify (need >= 2)")]
    CannotStratify { class: String, count: usize },

    #[error("compression backend failure: {0}")]
    Compression(String),

    #[error("correlation needs at least 3 profile rows, got {0}")]
    TooFewRows(usize),

    #[error("feature dimension mismatch: model expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("class domain mismatch: {0}")]
    ClassDomainMismatch(String),

    #[error("degenerate probability: {0}")]
    DegenerateProbability(String),

    #[error("target correlation {requested} unreachable; feasible interval is [{lo}, {hi}]")]
    UnreachableCorrelation { requested: f64, lo: f64, hi: f64 },

    #[error("model format error in {path}: {reason}")]
    ModelFormat { path: PathBuf, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
