//! Library side of the `ecoscale` command-line tool.

pub mod commands;
pub mod config;

use std::path::PathBuf;

pub use config::{Precision, RunConfig, SplitRule};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ecoscale_core::Error),
    #[error("config {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Usage(String),
}
