//! `rmt-eed` command-line entry point.
//!
//! Exit codes: 0 success, 1 input or contract error (including bad usage),
//! 2 numerical failure.

mod args;
mod commands;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

const SEED_ENV: &str = "RMT_EED_SEED";

fn resolve_seed(flag: Option<u64>) -> Result<u64, String> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| format!("{SEED_ENV}='{v}' is not an unsigned integer")),
        Err(_) => Ok(0),
    }
}

fn run(cli: Cli) -> rmt_eed::Result<()> {
    let seed = resolve_seed(cli.command.seed()).map_err(rmt_eed::Error::Config)?;
    let stdout = std::io::stdout();
    match &cli.command {
        Command::Simulate(a) => commands::simulate(a, seed),
        Command::Analyze(a) => commands::analyze(a, seed, stdout.lock()).map(drop),
        Command::Theory(a) => commands::theory(a, seed, stdout.lock()),
        Command::PcaBaseline(a) => commands::pca_baseline(a, seed, stdout.lock()).map(drop),
        Command::Mapframes(a) => commands::mapframes(a, seed).map(|n| println!("{n} frame(s) in {}", a.out.display())),
    }
}

fn main() -> ExitCode {
    let argv = match args::expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error [cli]: {msg}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    log::debug!("{} (seed from flag or {SEED_ENV})", cli.command.name());
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.module());
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
