use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the extraction, training, summarization, and
/// classification pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("frames out of order: previous map is for frame {prev}, next is frame {next}")]
    NonConsecutiveFrames { prev: usize, next: usize },

    #[error("bad magic: expected \"FTS1\", got {0:?}")]
    BadMagic([u8; 4]),

    #[error("truncated tensor stream: needed {expected} bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("tensor dimensions overflow: {0}")]
    DimsOverflow(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("missing semantic vector for class {0:?}")]
    MissingClassVector(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f32 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], actual: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }
}
