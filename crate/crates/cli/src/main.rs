mod artifacts;
mod cli;
mod commands;
mod config;

use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;

use cli::{Cli, Command};
use config::RunConfig;

/// Bad flag combinations found after parsing.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    let numeric = err
        .chain()
        .any(|e| e.downcast_ref::<kglm_core::Error>().is_some_and(|e| e.is_numeric()));
    if numeric {
        EXIT_NUMERIC
    } else {
        EXIT_DATA
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref()).map_err(|e| UsageError(format!("{e:#}")))?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cli.command.apply(&mut cfg);
    cfg.propagate_seed();
    match &cli.command {
        Command::Ingest(a) => commands::ingest(a, &cfg),
        Command::Tokenize(a) => commands::tokenize(a, &cfg),
        Command::Train(a) => commands::train_cmd(a, &cfg),
        Command::Predict(a) => commands::predict(a, &cfg),
        Command::EvalLp(a) => commands::eval_lp(a, &cfg),
        Command::Calibrate(a) => commands::calibrate(a, &cfg),
        Command::Align(a) => commands::align(a, &cfg),
        Command::Retrieve(a) => commands::retrieve_cmd(a, &cfg),
        Command::Baseline(a) => commands::baseline(a, &cfg),
        Command::TransferExp(a) => commands::transfer(a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kglm {}: error: {e:#}", cli.command.name());
            ExitCode::from(exit_code(&e))
        }
    }
}
