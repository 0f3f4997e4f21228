//! Library side of the `toon3d` command line: file formats, corpus building,
//! reports, and the command implementations. The binary in `main.rs` is a
//! thin wrapper so integration tests can drive commands in-process.

pub mod commands;
pub mod corpus;
pub mod grid;
pub mod io;
pub mod manifest;
pub mod mesh;
pub mod report;

use std::fmt;

/// Process exit codes: 0 success, 2 configuration, 3 numeric, 4 I/O.
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Core(toon3d_core::Error),
    Io(String),
    Config(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<toon3d_core::Error> for CliError {
    fn from(e: toon3d_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(toon3d_core::Error::Numeric { .. }) => EXIT_NUMERIC,
            CliError::Core(
                toon3d_core::Error::Config(_)
                | toon3d_core::Error::Argument(_)
                | toon3d_core::Error::Shape(_)
                | toon3d_core::Error::Degenerate(_)
                | toon3d_core::Error::Incompatible(_),
            ) => EXIT_CONFIG,
            CliError::Core(toon3d_core::Error::Integrity { .. }) => EXIT_IO,
            CliError::Io(_) => EXIT_IO,
            CliError::Config(_) => EXIT_CONFIG,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
