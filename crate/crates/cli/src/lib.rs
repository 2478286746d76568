//! Command-line driver: config handling, the pipeline steps, and the files
//! they read and write.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod logs;
pub mod report;

use std::io::Write;

pub use args::{Cli, Command, RunArgs};
pub use commands::{replay, run_step, RunManifest, Step};
pub use config::RunConfig;
pub use error::{CliError, Result};
pub use report::EvalReport;

fn with_threads<T>(threads: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T>
where
    T: Send,
{
    match threads {
        None => f(),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(f),
    }
}

/// Runs a parsed command line, writing human-readable output to `out`.
pub fn run(cli: &Cli, out: &mut (dyn Write + Send)) -> Result<()> {
    match &cli.command {
        Command::Replay {
            manifest,
            output_dir,
            threads,
        } => with_threads(*threads, || replay(manifest, output_dir.clone(), out)),
        cmd => {
            let (step, args) = cmd.step().expect("non-replay command");
            let cfg = args.resolve()?;
            with_threads(cfg.threads, || run_step(step, &cfg, args.json, out))
        }
    }
}
