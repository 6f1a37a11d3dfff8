//! File formats, checkpoints and subcommands for the `omicscl` binary.
//!
//! The numerical pipeline lives in [`omicscl_core`]; this crate reads and
//! writes CSV/JSON and wires the pieces into the `generate`, `train`,
//! `evaluate`, `ablate` and `sweep` commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod csvio;

pub use config::Config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] omicscl_core::Error),
}

impl CliError {
    /// 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(omicscl_core::Error::NonFinite(_)) => 2,
            _ => 1,
        }
    }
}
