use thiserror::Error;

/// Errors across the library.
///
/// Data-format failures get distinct variants so callers (and the CLI exit-code
/// table) can tell them apart without string matching.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: {detail}")]
    DimensionMismatch {
        context: &'static str,
        detail: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{context} needs at least {need} samples, got {got}")]
    SampleTooSmall {
        context: &'static str,
        need: usize,
        got: usize,
    },

    #[error("non-finite value during {0}")]
    NonFinite(String),

    #[error("EM did not converge after {attempts} attempts")]
    EmDidNotConverge { attempts: usize },

    #[error("scores contain a single class; need both positives and negatives")]
    SingleClass,

    #[error("malformed csv header: {0}")]
    MalformedHeader(String),

    #[error("ragged csv row at line {line}: expected {expected} fields, got {got}")]
    RaggedRow {
        line: usize,
        expected: usize,
        got: usize,
    },

    #[error("unparsable float at line {line}: {value:?}")]
    BadFloat { line: usize, value: String },

    #[error("non-finite value in payload at row {row}, column {col}")]
    NonFiniteData { row: usize, col: usize },

    #[error("bad magic: expected \"DMIA\"")]
    MagicMismatch,

    #[error("binary payload size mismatch: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },

    #[error("unsupported schema version {got} (this build reads version {supported})")]
    UnsupportedVersion { got: u32, supported: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by unreadable or malformed input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::MalformedHeader(_)
                | Error::RaggedRow { .. }
                | Error::BadFloat { .. }
                | Error::NonFiniteData { .. }
                | Error::MagicMismatch
                | Error::Truncated { .. }
                | Error::UnsupportedVersion { .. }
                | Error::Io(_)
                | Error::Json(_)
        )
    }

    /// True for failures of the numerical procedures themselves.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::EmDidNotConverge { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
