use thiserror::Error;

/// Errors produced by the quantization toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("truncated data: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },

    #[error("unsupported dtype byte {0}")]
    UnsupportedDtype(u8),

    #[error("unsupported format byte {0}")]
    UnsupportedFormat(u8),

    #[error("scale array length mismatch: expected {expected}, found {found}")]
    ScaleCountMismatch { expected: usize, found: usize },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by malformed file contents rather than I/O failures.
    pub fn is_format_error(&self) -> bool {
        matches!(
            self,
            Error::BadMagic { .. }
                | Error::Truncated { .. }
                | Error::UnsupportedDtype(_)
                | Error::UnsupportedFormat(_)
                | Error::ScaleCountMismatch { .. }
                | Error::TrailingBytes(_)
                | Error::Corrupt(_)
        )
    }
}
