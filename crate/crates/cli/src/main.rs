mod args;
mod commands;
mod dataset;
mod record;

use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use args::{Cli, Command};

/// Caps the rayon worker pool when `BBF_THREADS` is set.
fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("BBF_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .with_context(|| format!("BBF_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    let g = &cli.global;
    if g.trials == 0 {
        anyhow::bail!("--trials must be at least 1");
    }
    match &cli.command {
        Command::Approx { save } => commands::approx(g, save.as_deref()),
        Command::Compare { method } => commands::compare(g, method),
        Command::Stats { inv_h2, rank } => commands::stats(g, inv_h2, *rank),
        Command::Scaling { sizes, rank } => commands::scaling(g, sizes, *rank),
        Command::Synth => commands::synth(g),
        Command::Save { path } => commands::save(g, path),
        Command::Load { path } => commands::load(g, path),
        Command::Matvec { path, input } => commands::matvec(g, path, input.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
