//! Command-line entry points and the HTTP run service.

pub mod commands;
pub mod config;
pub mod service;
pub mod store;

use std::ffi::OsString;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Parser;
use mfsim_core::corpus::load_corpus;

use crate::commands::{Cli, Failure};
use crate::config::{FileConfig, Models};
use crate::service::AppState;
use crate::store::RunStore;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Everything the service needs, built from the config file.
pub fn build_state(
    file: &FileConfig,
    corpus: &Path,
    runs: &Path,
    workers: usize,
    seed: u64,
) -> Result<AppState> {
    let corpus = load_corpus(corpus).with_context(|| format!("loading {}", corpus.display()))?;
    Ok(AppState {
        corpus: Arc::new(corpus),
        store: Arc::new(RunStore::open(runs)?),
        models: Arc::new(Models::build(&file.backend, seed)?),
        judge: Arc::from(file.judge.build(seed)?),
        schema: file.schema.build()?,
        window: file.window.unwrap_or(16),
        batch_size: file.service.batch_size,
        simulation_defaults: file.simulation.clone(),
        workers: Arc::new(tokio::sync::Semaphore::new(workers.max(1))),
    })
}

/// Parse `argv`, run the command and return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nSee `mfsim --help`.");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}
