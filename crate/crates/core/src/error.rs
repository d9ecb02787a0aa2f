//! Crate-wide error type.

use thiserror::Error;

/// Errors reported by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Underlying I/O failure while reading or writing a volume file.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// File does not start with the expected magic bytes.
    #[error("bad magic: expected \"VOL1\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    /// Payload shorter (or longer) than the header promises.
    #[error("truncated payload: expected {expected} elements, found {found}")]
    Truncated { expected: usize, found: usize },

    /// Header dtype code outside the supported set.
    #[error("invalid dtype code {0} (expected 0 = f32 scalar, 1 = u8 mask)")]
    InvalidDtype(u8),

    /// Scalar payload contains NaN or infinity.
    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    /// Header fields violate their invariants.
    #[error("invalid header: {0}")]
    InvalidHeader(String),

    /// Two fields that must share dimensions do not.
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },

    /// An argument outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A surface-distance metric was queried with an empty mask.
    #[error("undefined metric: {0} requires non-empty masks")]
    EmptyMask(&'static str),

    /// Statistical test has no defined value on this input.
    #[error("undefined test: {0}")]
    UndefinedTest(String),

    /// Phantom cavity generation failed after bounded retries.
    #[error("cavity generation failed after {attempts} attempts (cavity escaped volume)")]
    CavityGeneration { attempts: usize },
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
