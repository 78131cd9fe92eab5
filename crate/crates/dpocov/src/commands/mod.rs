//! Subcommand implementations. Each returns a [`CommandResult`] once its
//! artifacts are written; input problems surface as [`CliError`].

mod gen;
mod sweep;
mod train;
pub mod verify;

use std::fs;
use std::path::{Path, PathBuf};

pub use gen::cmd_gen;
pub use sweep::{cmd_sweep, SweepSummary, RATES_HEADER};
pub use train::{cmd_train, Checkpoint, GAP_HEADER};
pub use verify::cmd_verify;

use crate::error::{CliError, CliResult};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunContext {
    pub out: PathBuf,
    pub allow_nonconverged: bool,
}

impl RunContext {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunContext {
            out: out.into(),
            allow_nonconverged: false,
        }
    }

    /// Creates the output directory and returns the path of `name` in it.
    pub fn artifact(&self, name: &str) -> CliResult<PathBuf> {
        ensure_dir(&self.out)?;
        Ok(self.out.join(name))
    }
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(CliError::io(dir))
}
