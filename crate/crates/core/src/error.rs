use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or dimensions disagree with what an operation requires.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Bad magic, version or header field in a binary file.
    #[error("format error: {0}")]
    Format(String),

    /// Payload truncated or inconsistent with its header.
    #[error("corrupt file: {0}")]
    Corrupt(String),

    /// Well-formed file with invalid content (NaN frames, out-of-range labels, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("numeric fault in {block}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NumericFault { block: String, step: Option<u64> },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
