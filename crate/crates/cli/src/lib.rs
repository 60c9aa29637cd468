//! File formats, run directories and the command-line driver for
//! `paced-forest-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod csvio;
pub mod error;
pub mod run;

pub use error::{CliError, Result};
