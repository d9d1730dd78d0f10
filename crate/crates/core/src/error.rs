//! Crate-wide error type.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// All failures surfaced by the library.
///
/// Parse-class variants (`BadMagic`, `Truncated`, `DimOverflow`,
/// `VersionMismatch`, `CrcMismatch`, `MalformedSection`) describe corrupt or
/// foreign input files; `IncompatibleCodebook` and `ConfigMismatch` describe
/// structurally valid data that belongs to a different pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {context} (expected {expected}, got {got})")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("bad magic in {context}: expected {expected:?}, found {found:?}")]
    BadMagic {
        context: &'static str,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("truncated {context}: need {needed} bytes, have {available}")]
    Truncated {
        context: &'static str,
        needed: usize,
        available: usize,
    },

    #[error("dimension overflow in {context}: {detail}")]
    DimOverflow {
        context: &'static str,
        detail: String,
    },

    #[error("unsupported version {found} in {context} (supported: {supported})")]
    VersionMismatch {
        context: &'static str,
        found: u8,
        supported: u8,
    },

    #[error("checksum mismatch in {context}: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch {
        context: &'static str,
        stored: u32,
        computed: u32,
    },

    #[error("incompatible codebook for {context}: stored hash {stored:#018x}, pipeline hash {expected:#018x}")]
    IncompatibleCodebook {
        context: String,
        stored: u64,
        expected: u64,
    },

    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    #[error("malformed {context}: {detail}")]
    MalformedSection {
        context: &'static str,
        detail: String,
    },

    #[error("index {index} out of range for codebook of size {size}")]
    IndexOutOfRange { index: u32, size: u32 },

    #[error("frame {frame} out of range for {frames} frames")]
    FrameOutOfRange { frame: usize, frames: usize },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("pipeline component missing: {0}")]
    Unfitted(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Wraps an io error with the path it occurred on.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by unparseable bytes rather than by valid data
    /// from the wrong pipeline.
    pub fn is_parse_error(&self) -> bool {
        matches!(
            self,
            Error::BadMagic { .. }
                | Error::Truncated { .. }
                | Error::DimOverflow { .. }
                | Error::VersionMismatch { .. }
                | Error::CrcMismatch { .. }
                | Error::MalformedSection { .. }
        )
    }
}
