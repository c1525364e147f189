//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CtunError>;

#[derive(Error, Debug)]
pub enum CtunError {
    /// Tensor shapes are incompatible for the named operation.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An argument is outside the operation's documented domain.
    #[error("invalid argument to {op}: {detail}")]
    InvalidArg { op: &'static str, detail: String },

    /// `backward` was called on a tensor that is not a single scalar.
    #[error("backward requires a scalar loss, got shape {shape}")]
    NonScalarLoss { shape: String },

    /// A numeric check tripped (NaN loss, NaN gradient, NaN objective).
    #[error("numeric failure: {detail}")]
    Numeric { detail: String },

    /// A parameter named in a weight file does not match the model schema.
    #[error("weight/config mismatch for tensor '{name}': {detail}")]
    WeightMismatch { name: String, detail: String },

    /// Weight file is malformed (magic, version, CRC, truncation).
    #[error("bad weight file: {detail}")]
    WeightFormat { detail: String },

    /// A frame directory has a gap in its numbering.
    #[error("frame sequence gap: missing index {index}")]
    MissingFrame { index: usize },

    /// A frame directory holds no frames at all.
    #[error("no frames found in {dir}")]
    NoFrames { dir: String },

    /// Frames in one sequence disagree on size.
    #[error("inconsistent frame sizes: {detail}")]
    FrameSize { detail: String },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl CtunError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        CtunError::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn arg(op: &'static str, detail: impl Into<String>) -> Self {
        CtunError::InvalidArg {
            op,
            detail: detail.into(),
        }
    }
}
