use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes cannot be combined by the named operation.
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A single-tensor operation received a shape it cannot work with.
    #[error("{op}: bad shape {shape:?}: {detail}")]
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        detail: String,
    },

    /// Input values outside the mathematical domain of the operation.
    #[error("{op}: domain error: {detail}")]
    Domain { op: &'static str, detail: String },

    /// Invalid configuration key or value.
    #[error("config: {0}")]
    Config(String),

    /// Malformed or truncated checkpoint container.
    #[error("container: {0}")]
    Container(String),

    /// Checkpoint contents do not match the network being restored.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Image decode or encode failure.
    #[error("image: {0}")]
    Image(String),

    /// Missing or unusable dataset inputs.
    #[error("data: {0}")]
    Data(String),

    /// Non-finite value encountered where training cannot continue.
    #[error("numeric: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn bad_shape(op: &'static str, shape: &[usize], detail: impl Into<String>) -> Self {
        Error::BadShape {
            op,
            shape: shape.to_vec(),
            detail: detail.into(),
        }
    }
}
