use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("batch-norm affine is not invertible: channel {channel} has zero scale")]
    NotInvertible { channel: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("value out of binary16 range: {0}")]
    Range(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("incompatible model and stream: {0}")]
    Compatibility(String),

    #[error("stream payload is held by an external codec; decode it with the companion tile file")]
    ExternalPayload,

    #[error("training diverged at iteration {iteration} (last finite loss {last_finite_loss:?}): {detail}")]
    Divergence {
        iteration: usize,
        last_finite_loss: Option<f64>,
        detail: String,
    },

    #[error("harness error: {0}")]
    Harness(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Compatibility(_) | Error::Harness(_) => 2,
            Error::Divergence { .. } => 4,
            _ => 3,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::Corrupt(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
