//! Files, datasets and the `snn` command line on top of `snn-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod netfile;
pub mod report;

pub use error::{Result, ToolError};
