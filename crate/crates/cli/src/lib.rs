//! Command-line front end: config resolution, subcommand pipelines and
//! artifact persistence for the `pepsvqe` binary.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

use clap::Parser;
use log::error;

use cli::{Cli, Command};
use error::CliResult;

fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).try_init();
}

fn dispatch(command: &Command) -> CliResult<()> {
    let (name, (cfg, out)) = match command {
        Command::Optimize(a) => ("optimize", commands::resolve_optimize(a)?),
        Command::Diagnose(a) => ("diagnose", commands::resolve_diagnose(a)?),
        Command::Scaling(a) => ("scaling", commands::resolve_scaling(a)?),
        Command::IteReference(a) => ("ite-reference", commands::resolve_ite(a)?),
        Command::Validate(a) => ("validate", commands::resolve_validate(a)?),
    };
    commands::persist(&cfg, &out, name)?;
    pepsvqe::tensor::set_kernel_threads(cfg.threads());
    log::info!("{name}: artifacts in {}", out.display());
    match command {
        Command::Optimize(_) => commands::run_optimize(&cfg, &out),
        Command::Diagnose(_) => commands::run_diagnose(&cfg, &out),
        Command::Scaling(_) => commands::run_scaling(&cfg, &out),
        Command::IteReference(_) => commands::run_ite(&cfg, &out),
        Command::Validate(_) => commands::run_validate(&cfg, &out),
    }
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code: 0 success, 2 configuration error, 3 numerical failure,
/// 4 reference not converged.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
