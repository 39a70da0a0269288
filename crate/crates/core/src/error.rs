use std::path::PathBuf;

/// Errors produced anywhere in the flow stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular system: pivot {pivot} has magnitude below threshold")]
    Singular { pivot: usize },

    #[error("householder vector {index} has (near) zero norm")]
    ZeroVector { index: usize },

    #[error("inverse DFT input is not Hermitian (imaginary residue {residue:e})")]
    NonHermitian { residue: f64 },

    #[error("layer is not invertible: zero diagonal tap in channel {channel}")]
    ZeroDiagonalTap { channel: usize },

    #[error("layer is not invertible: {0}")]
    NonInvertible(String),

    #[error("periodic convolution is singular at frequency (u={u}, v={v})")]
    SingularFrequency { u: usize, v: usize },

    #[error("missing latent for split layer {index}")]
    MissingLatent { index: usize },

    #[error("pixel value {value} out of range 0..=255")]
    PixelRange { value: u32 },

    #[error("loss is not a scalar (shape {0:?})")]
    NotScalar(Vec<usize>),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },

    #[error("model is not initialized; run data-dependent initialization first")]
    Uninitialized,

    #[error("malformed image {path}: {msg}")]
    Image { path: PathBuf, msg: String },

    #[error("checkpoint format error at byte {pos}: {msg}")]
    Checkpoint { pos: u64, msg: String },

    #[error("layer {index}: {source}")]
    Layer {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn at_layer(index: usize) -> impl FnOnce(Error) -> Error {
        move |e| Error::Layer { index, source: Box::new(e) }
    }

    /// The innermost error, looking through layer annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::Layer { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures that stem from the numbers rather than from the inputs' shape or format.
    pub fn is_numerical(&self) -> bool {
        if let Error::Layer { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::Singular { .. }
                | Error::NonHermitian { .. }
                | Error::ZeroDiagonalTap { .. }
                | Error::NonInvertible(_)
                | Error::SingularFrequency { .. }
                | Error::NonFiniteLoss { .. }
        )
    }
}
