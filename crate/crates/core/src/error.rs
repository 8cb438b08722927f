//! Error type shared by every module in the crate.

use std::io;
use thiserror::Error;

/// Coarse failure class. The CLI maps these onto its exit-code taxonomy
/// (1 = malformed input, 2 = constraint violation, 3 = I/O).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Input data that cannot be decoded (bad magic, truncation, invalid codes).
    Parse,
    /// A domain constraint was violated (shapes, divisibility, ranges).
    Constraint,
    /// Operating-system I/O failure.
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {context}")]
    ShapeMismatch { context: String },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("{context}: length {len} is not divisible by {divisor}")]
    NotDivisible {
        context: &'static str,
        len: usize,
        divisor: usize,
    },

    #[error("granularity mismatch: {reason}")]
    Granularity { reason: String },

    #[error("oracle column length {len} exceeds the exhaustive-search limit of {max}")]
    OracleTooLong { len: usize, max: usize },

    #[error("3:4 block must contain exactly three non-zero codes, found {nonzeros}")]
    InvalidBlock { nonzeros: usize },

    #[error("block index {index} out of range 0..=15")]
    InvalidIndex { index: u8 },

    #[error("packed scheme {found} cannot be used here (expected {expected})")]
    SchemeMismatch {
        expected: &'static str,
        found: &'static str,
    },

    #[error("invalid code unit {value} in packed payload")]
    InvalidCodeUnit { value: u32 },

    #[error("malformed file: {reason}")]
    MalformedFile { reason: String },

    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },

    #[error("step {step} out of schedule range 0..={total}")]
    StepOutOfRange { step: u64, total: u64 },

    #[error("cannot export: annealing gate has not reached zero (lambda = {lambda})")]
    NonzeroLambda { lambda: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            // Invalid code units only arise while decoding packed payloads,
            // i.e. from data that claims to be a packed tensor but is not.
            Error::MalformedFile { .. } | Error::InvalidCodeUnit { .. } => ErrorCategory::Parse,
            Error::Io(_) => ErrorCategory::Io,
            _ => ErrorCategory::Constraint,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
