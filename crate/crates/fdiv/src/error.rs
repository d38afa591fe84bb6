use thiserror::Error;

/// Errors of the file formats, harness and command line.
#[derive(Debug, Error)]
pub enum FdivError {
    #[error(transparent)]
    Core(#[from] fdiv_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("rejection sampler stalled: acceptance rate {rate:.3e}")]
    RejectionStall { rate: f64 },
    #[error("feature map of kind {0} cannot be serialized")]
    Unserializable(&'static str),
}

pub type Result<T> = std::result::Result<T, FdivError>;

pub(crate) fn io_error(path: &std::path::Path, source: std::io::Error) -> FdivError {
    FdivError::Io {
        path: path.display().to_string(),
        source,
    }
}
