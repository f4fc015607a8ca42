//! IO, file formats, configuration, and the command-line front end for the
//! fusion workspace. The numerical work lives in `mef-core`; this crate owns
//! everything that touches the filesystem.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod imgio;
pub mod manifest;

pub use error::{CliError, CliResult};
