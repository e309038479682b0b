use std::fmt;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which binary container a decoding error refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Weights,
    Density,
    Pgm,
    PatchBlob,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Weights => "CNWT weight file",
            Format::Density => "DMAP density file",
            Format::Pgm => "PGM image",
            Format::PatchBlob => "patch blob",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: {dim} mismatch (expected {expected}, got {actual})")]
    DimensionMismatch {
        op: &'static str,
        dim: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: incompatible shapes {left} and {right}")]
    IncompatibleShapes {
        op: &'static str,
        left: Shape,
        right: Shape,
    },

    #[error("{op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },

    #[error("{what} is empty")]
    Empty { what: &'static str },

    #[error("non-finite gradient in parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("non-finite loss {loss} at iteration {iteration} (max |grad| = {max_grad})")]
    NonFiniteLoss {
        iteration: usize,
        loss: f64,
        max_grad: f32,
    },

    #[error("{format}: bad magic {found:?}")]
    BadMagic { format: Format, found: Vec<u8> },

    #[error("{format}: unsupported version {version}")]
    UnsupportedVersion { format: Format, version: u32 },

    #[error("{format}: truncated (needed {needed} bytes, {available} available)")]
    Truncated {
        format: Format,
        needed: usize,
        available: usize,
    },

    #[error("{format}: {reason}")]
    Malformed { format: Format, reason: String },

    #[error("weights do not match network: {0}")]
    WeightShape(String),

    #[error("unsupported image format: {0}")]
    UnsupportedImage(String),

    #[error("annotation JSON is malformed: {0}")]
    AnnotationJson(String),

    #[error("annotation JSON is missing key `{0}`")]
    AnnotationMissingKey(&'static str),

    #[error("annotation point {index} has a non-numeric coordinate")]
    AnnotationNonNumeric { index: usize },

    #[error("infeasible synthetic density: {count} points with {separation}px separation in a {width}x{height} image")]
    InfeasibleDensity {
        count: usize,
        separation: f32,
        width: usize,
        height: usize,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            reason: reason.into(),
        }
    }
}
