use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A prediction or label file could not be parsed. Rows and columns are
    /// 1-based file coordinates (the header is row 1).
    #[error("ingestion error at row {row}, column {column}: {message}")]
    Ingest {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("length mismatch: expected {expected} entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("class id {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("example index {index} out of range for {num_examples} examples")]
    ExampleOutOfRange { index: usize, num_examples: usize },

    #[error("error rate must lie in the open interval (0, 1), got {0}")]
    InvalidErrorRate(f64),

    #[error("budget exceeds pool")]
    PoolExhausted,

    #[error("example {0} is already labeled")]
    AlreadyLabeled(usize),

    #[error("no labeled examples")]
    NoEvidence,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn ingest(row: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Ingest {
            row,
            column,
            message: message.into(),
        }
    }

    /// True for errors caused by malformed or inconsistent input data, as
    /// opposed to configuration or runtime failures.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Ingest { .. }
                | Error::LengthMismatch { .. }
                | Error::ClassOutOfRange { .. }
                | Error::ExampleOutOfRange { .. }
                | Error::Csv(_)
                | Error::Invalid(_)
        )
    }

    pub fn is_config_error(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidErrorRate(_))
    }
}
