//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use dpocov_core::objectives::Setting;

use crate::commands::{cmd_gen, cmd_sweep, cmd_train, cmd_verify, RunContext};
use crate::config::LoadedConfig;
use crate::error::{exit, CliError, CliResult, CommandResult};

#[derive(Debug, Parser)]
#[command(name = "dpocov", version, about = "Tabular DPO-COV laboratory")]
pub struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's top-level seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads for sweeps; defaults to the available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Exit 0 even when some optimizations stop before the tolerance.
    #[arg(long, global = true)]
    pub allow_nonconverged: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SettingArg {
    Offline,
    Online,
}

impl From<SettingArg> for Setting {
    fn from(s: SettingArg) -> Self {
        match s {
            SettingArg::Offline => Setting::Offline,
            SettingArg::Online => Setting::Online,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an offline preference dataset.
    Gen,
    /// Train one policy and report its generalization gap.
    Train {
        #[arg(long, value_enum, default_value = "offline")]
        setting: SettingArg,
    },
    /// Run a grid of rate experiments in parallel.
    Sweep,
    /// Run the verification suite.
    Verify {
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
    },
}

fn load(cli: &Cli) -> CliResult<LoadedConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation("this subcommand needs --config PATH".into()))?;
    LoadedConfig::load(path, cli.seed)
}

fn dispatch(cli: &Cli) -> CliResult<CommandResult> {
    let ctx = RunContext {
        out: cli.out.clone(),
        allow_nonconverged: cli.allow_nonconverged,
    };
    match &cli.command {
        Command::Gen => cmd_gen(&load(cli)?, &ctx),
        Command::Train { setting } => cmd_train(&load(cli)?, &ctx, (*setting).into()),
        Command::Sweep => cmd_sweep(&load(cli)?, &ctx),
        Command::Verify { trials } => {
            let seed = match (cli.seed, &cli.config) {
                (Some(s), _) => s,
                (None, Some(_)) => load(cli)?.config.seed,
                (None, None) => 0,
            };
            cmd_verify(seed, *trials, &ctx)
        }
    }
}

/// Runs a parsed command inside a thread pool of the requested size.
pub fn run(cli: &Cli) -> CliResult<CommandResult> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    builder.build()?.install(|| dispatch(cli))
}

/// Parses arguments, runs, reports errors and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::VALIDATION } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(r) => r.exit_code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn global_flags_follow_the_subcommand() {
        let cli = Cli::try_parse_from(["dpocov", "train", "--setting", "online", "--seed", "4", "--threads", "2"]).unwrap();
        assert_eq!(cli.seed, Some(4));
        assert_eq!(cli.threads, Some(2));
        assert!(matches!(cli.command, Command::Train { setting: SettingArg::Online }));
    }

    #[test]
    fn usage_errors_map_to_validation_exit() {
        assert_eq!(main_with_args(["dpocov", "bogus"]), exit::VALIDATION);
        assert_eq!(main_with_args(["dpocov", "gen"]), exit::VALIDATION);
    }
}
