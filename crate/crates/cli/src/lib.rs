//! Library side of the `utmost` binary: configuration, commands and output.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use error::{CliError, CliResult};
