use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("buffer length {actual} does not match {width}x{height}x{channels} = {expected}")]
    BufferLength {
        width: usize,
        height: usize,
        channels: usize,
        expected: usize,
        actual: usize,
    },

    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },

    #[error("dimension mismatch: {what} is {left:?}, expected {right:?}")]
    DimensionMismatch {
        what: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("class count mismatch: {left} vs {right}")]
    ClassCountMismatch { left: usize, right: usize },

    #[error("label {label} at pixel ({x}, {y}) is outside [0, {num_classes}) and is not the ignore id {ignore_id}")]
    LabelOutOfRange {
        label: u8,
        x: usize,
        y: usize,
        num_classes: usize,
        ignore_id: u8,
    },

    #[error("ignore id {ignore_id} collides with class range [0, {num_classes})")]
    IgnoreCollision { ignore_id: u8, num_classes: usize },

    #[error("probability distribution at pixel ({x}, {y}) sums to {sum}")]
    NotNormalized { x: usize, y: usize, sum: f64 },

    #[error("invalid value {value} at index {index} in {what}")]
    InvalidValue {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },

    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        found: [u8; 4],
        expected: [u8; 4],
    },

    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("{dir}: no frames matched pattern {pattern:?}")]
    NoFramesMatched { dir: PathBuf, pattern: String },

    #[error("{path}: frame is {found:?}, expected {expected:?} like the rest of the sequence")]
    MixedDimensions {
        path: PathBuf,
        found: (usize, usize),
        expected: (usize, usize),
    },

    #[error("invalid frame pattern {0:?}: expected a single %0Nd placeholder")]
    BadPattern(String),

    #[error("frame too small: {width}x{height} cannot hold {levels} pyramid levels with patch size {patch_size}")]
    FrameTooSmall {
        width: usize,
        height: usize,
        levels: usize,
        patch_size: usize,
    },

    #[error("no data for frame {frame_index}: {reason}")]
    MissingFrame { frame_index: u64, reason: String },

    #[error("frame {frame_index}: {source}")]
    AtFrame {
        frame_index: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("no classes present in the evaluation")]
    EmptyEvaluation,

    #[error("unknown operating point {name:?}; valid names: {valid}")]
    UnknownOperatingPoint { name: String, valid: String },

    #[error("scene validation failed at {field}: {message}")]
    Scene { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::File {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn at_frame(self, frame_index: u64) -> Self {
        match self {
            e @ Error::AtFrame { .. } => e,
            other => Error::AtFrame {
                frame_index,
                source: Box::new(other),
            },
        }
    }
}
