use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tensor dimensions {0:?}: every dimension must be >= 1 and the element count must fit in memory")]
    Construction([usize; 4]),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A layer would produce an empty (or negative) spatial extent.
    #[error("sizing error at layer `{layer}`: {detail}")]
    Sizing { layer: String, detail: String },

    #[error("data error: {0}")]
    Data(String),

    /// Malformed input file. `offset` is the byte position where decoding failed.
    #[error("{what} at byte offset {offset}: {message}")]
    Format {
        what: &'static str,
        offset: usize,
        message: String,
    },

    #[error("non-finite loss at iteration {iteration}: {loss}")]
    NonFinite { iteration: usize, loss: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn sizing(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Sizing {
            layer: layer.into(),
            detail: detail.into(),
        }
    }
}
