//! Companion crate to `dpocov-core`: JSON configuration, dataset and
//! instance file formats, parallel sweeps, the verification suite and the
//! `dpocov` command line.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod presets;

pub use error::{exit, CliError, CommandResult};
