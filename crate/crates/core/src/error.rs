use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid bit value {value} at index {index}")]
    InvalidBit { index: usize, value: u8 },

    #[error("channel with {taps} taps does not fit a block of {block} samples")]
    ChannelTooLong { taps: usize, block: usize },

    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("non-finite value in {what} at layer {layer}")]
    NonFinite { layer: usize, what: &'static str },

    #[error("training diverged at epoch {epoch}: loss {loss:e} vs initial {initial:e}")]
    Diverged {
        epoch: usize,
        loss: f64,
        initial: f64,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
