//! Command-line driver and HTTP API for the log2ns workbench.

pub mod api;
pub mod commands;

pub use commands::{run, Cli};
