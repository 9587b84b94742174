use thiserror::Error;

/// Errors produced by the segmentation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("mask is entirely foreground; signed distance is undefined")]
    AllForeground,
    #[error("mask is entirely background; signed distance is undefined")]
    AllBackground,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("sample set is empty")]
    EmptySamples,
    #[error("bandwidth must be positive, got {0}")]
    NonPositiveBandwidth(f64),
    #[error("invalid samples: {0}")]
    InvalidSamples(String),
    #[error("sample coordinate {index} exceeds extent {len} on axis {axis}")]
    CoordinateOutOfRange {
        index: usize,
        len: usize,
        axis: usize,
    },
    #[error("inconsistent grid extents in training set: {0}")]
    InconsistentDims(String),
    #[error("shape atlas is empty")]
    EmptyAtlas,
    #[error("non-finite force encountered (check the density floor)")]
    NonFiniteForce,
    #[error("degenerate sample: all paired differences are identical (zero variance)")]
    DegenerateSample,
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
    #[error("model format version {found} is not supported (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("model archive checksum mismatch for {0}")]
    ChecksumMismatch(String),
    #[error("unsupported or malformed file: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
