use std::path::{Path, PathBuf};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VALIDATION: i32 = 1;
    pub const NONCONVERGED: i32 = 2;
    pub const VERIFICATION: i32 = 3;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Malformed configuration or input file, with a location.
    #[error("{0}")]
    Validation(String),
    #[error(transparent)]
    Core(#[from] dpocov_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        exit::VALIDATION
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn csv(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
        move |source| CliError::Csv { path: path.to_path_buf(), source }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Outcome of a subcommand that ran to completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandResult {
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
}

impl CommandResult {
    pub fn ok(artifacts: Vec<PathBuf>) -> Self {
        CommandResult { exit_code: exit::OK, artifacts }
    }
}
