use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported element `{0}`")]
    UnsupportedElement(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("divergence: {0}")]
    Divergence(String),

    #[error("degenerate target {target}: standard deviation is zero")]
    DegenerateTarget { target: usize },

    #[error("all {0} search trials failed")]
    SearchFailed(usize),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
