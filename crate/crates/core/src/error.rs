//! Error types shared across the crate.

use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor or network shape disagreement.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid configuration (bad ranges, empty corpus, untrained component).
    #[error("configuration error: {0}")]
    Config(String),

    /// Bad argument outside configuration (k too large, empty sample set).
    #[error("argument error: {0}")]
    Argument(String),

    /// Non-finite values or diverged optimization. Carries the loss
    /// trajectory observed before the failure when one exists.
    #[error("numeric error: {msg}")]
    Numeric { msg: String, trajectory: Vec<f64> },

    /// Degenerate input (empty mask, constant signal where variation is required).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Checkpoint or archive whose content does not match its manifest.
    /// `diff` lists the offending entries.
    #[error("integrity error: {msg}")]
    Integrity { msg: String, diff: Vec<String> },

    /// Architectures that cannot be combined (interpolation, loading).
    #[error("incompatible: {0}")]
    Incompatible(String),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric {
            msg: msg.into(),
            trajectory: Vec::new(),
        }
    }

    pub fn numeric_with_trajectory(msg: impl Into<String>, trajectory: Vec<f64>) -> Self {
        Error::Numeric {
            msg: msg.into(),
            trajectory,
        }
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }

    pub fn integrity(msg: impl Into<String>, diff: Vec<String>) -> Self {
        Error::Integrity {
            msg: msg.into(),
            diff,
        }
    }

    pub fn incompatible(msg: impl Into<String>) -> Self {
        Error::Incompatible(msg.into())
    }
}
