use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: header declares {expected} bytes of payload, found {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("trailing data: header declares {expected} bytes of payload, found {actual}")]
    TrailingData { expected: u64, actual: u64 },
    #[error("non-finite component at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("row {row} has zero norm")]
    ZeroNorm { row: usize },
    #[error("duplicate {what} in corpus: {value}")]
    Duplicate { what: &'static str, value: String },
    #[error("id table has {ids} entries but matrix has {rows} rows")]
    IdCountMismatch { ids: usize, rows: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("corpus is not unit-normalized")]
    NotNormalized,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("{what} out of range: {detail}")]
    OutOfRange { what: &'static str, detail: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("labels lack a {0} example; rate more images before training")]
    MissingClass(&'static str),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error("unknown item {0}")]
    UnknownItem(u64),
    #[error("item {item} is not in the pending batch")]
    NotPending { item: u64 },
    #[error("duplicate rating for item {item} by {rater} in round {round}")]
    DuplicateRating { item: u64, rater: String, round: u32 },
    #[error("item {item} already has all {required} required votes")]
    VotesComplete { item: u64, required: u32 },
    #[error("operation `{op}` not allowed in phase {phase}")]
    Phase { op: &'static str, phase: crate::session::Phase },
    #[error("no checkpoint for round {0}")]
    MissingCheckpoint(u32),
    #[error("corpus exhausted: every item is already labeled")]
    CorpusExhausted,
    #[error("oracle has no label for item {0}")]
    OracleGap(u64),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json { context: context.into(), source }
    }
}

pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
    Error::io(path, source)
}

pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Error {
    Error::json(context, source)
}
