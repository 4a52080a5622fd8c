use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Malformed graph structure: index out of range, shape mismatch, bad CSR.
    #[error("structural error: {0}")]
    Structural(String),

    /// Values that violate a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("ingestion error at row {row}, column '{column}': {message}")]
    Ingestion {
        row: usize,
        column: String,
        message: String,
    },

    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("autodiff error: {0}")]
    Autodiff(String),

    #[error(
        "non-finite loss at epoch {epoch}: classification={l_c}, siamese={l_s}, total={total}"
    )]
    NonFinite {
        epoch: usize,
        l_c: f64,
        l_s: f64,
        total: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
