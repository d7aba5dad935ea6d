use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic: input is not a serialized array")]
    BadMagic,
    #[error("unsupported array format version {major}.{minor}")]
    UnsupportedVersion { major: u8, minor: u8 },
    #[error("malformed array header: {0}")]
    MalformedHeader(String),
    #[error("unsupported dtype: {0}")]
    UnsupportedDtype(String),
    #[error("malformed archive container: {0}")]
    MalformedArchive(String),
    #[error("archive is missing key {0:?}")]
    MissingKey(String),
    #[error("dtype mismatch for {key}: expected {expected}, found {found}")]
    DtypeMismatch {
        key: String,
        expected: &'static str,
        found: String,
    },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range [0, {max}]")]
    LabelOutOfRange { label: i64, max: i64 },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("input file is empty")]
    EmptyFile,
    #[error("trial has {n_samples} samples, window needs {length}")]
    TooShort { n_samples: usize, length: usize },
    #[error("too few trials: {0}")]
    TooFewTrials(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("empty training input")]
    EmptyInput,
    #[error("class {0} has no training rows")]
    ClassAbsent(usize),
    #[error("invalid fold count k={k} for n={n}")]
    BadK { k: usize, n: usize },
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("archive {0:?} is missing")]
    MissingArchive(String),
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("grid cell {cell}: {source}")]
    GridCell {
        cell: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True when the failure is numerical rather than a data or IO problem.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NoConvergence(_) | Error::NotPositiveDefinite(_) => true,
            Error::GridCell { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
