use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header at byte {offset}: {reason}")]
    BadHeader { offset: u64, reason: String },

    #[error("truncated payload: expected {expected} bytes, found {found} (at byte {offset})")]
    Truncated {
        offset: u64,
        expected: u64,
        found: u64,
    },

    #[error("non-finite activation {value} at unit {unit}, image {image}")]
    NonFinite { unit: usize, image: usize, value: f32 },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("duplicate image_id {image} at line {line}")]
    DuplicateImage { image: usize, line: usize },

    #[error("image_id {missing} has no row (ids must be dense 0..n)")]
    ImageGap { missing: usize },

    #[error("class {class} has no images")]
    EmptyClass { class: u32 },

    #[error("degenerate dataset: {0}")]
    Degenerate(String),

    #[error("unit {unit} out of range (dataset has {n_units} units)")]
    UnitOutOfRange { unit: usize, n_units: usize },

    #[error("class {0} does not exist")]
    UnknownClass(u32),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no predictions matched their labels")]
    EmptyFilter,

    #[error("no defined values for measure {0}")]
    NoDefinedValues(String),

    #[error("zero variance in measure {0}")]
    ZeroVariance(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
