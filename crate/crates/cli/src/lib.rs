//! Configuration, file formats and commands of the `relocl` tool.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset_io;
pub mod error;
pub mod fsutil;
pub mod report;

pub use error::{CliError, Result};
