use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("frame mismatch: expected {expected} frame, got {actual}")]
    FrameMismatch {
        expected: &'static str,
        actual: &'static str,
    },

    #[error("resolution mismatch: map {map} m, window {window} m")]
    ResolutionMismatch { map: f64, window: f64 },

    #[error("map spec mismatch: {0}")]
    SpecMismatch(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for failures caused by the filesystem rather than by the content
    /// of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Image(image::ImageError::IoError(_)))
    }
}

/// Reasons a map file is rejected by [`crate::mapstore::GlobalMap::load`].
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated payload")]
    Truncated,
    #[error("duplicate tile index ({ix}, {iy})")]
    DuplicateTile { ix: i32, iy: i32 },
    #[error("tile index ({ix}, {iy}) out of order")]
    TileOrder { ix: i32, iy: i32 },
    #[error("checksum mismatch")]
    Checksum,
    #[error("trailing bytes after checksum")]
    TrailingBytes,
    #[error("bad header field: {0}")]
    BadHeader(&'static str),
}
