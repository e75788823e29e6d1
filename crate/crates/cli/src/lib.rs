//! Command-line front end for the `trimbary` crate.
//!
//! Structured inputs and outputs are versioned JSON documents (see
//! [`formats`]); samples and sweep tables are CSV. Exit codes: 0 on success,
//! 2 on invalid input, 3 when a numerical routine fails to converge.

pub mod commands;
pub mod formats;

use clap::Parser;

/// Environment variable capping worker threads; 0 or unset means one per core.
pub const THREADS_ENV: &str = "OT_TRIMBARY_THREADS";

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "trimbary",
    version,
    about = "Trimmed k-barycenters in Wasserstein space"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: commands::Command,
}

/// Exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    let convergence = err
        .chain()
        .filter_map(|e| e.downcast_ref::<trimbary::Error>())
        .any(trimbary::Error::is_convergence_failure);
    if convergence {
        EXIT_CONVERGENCE
    } else {
        EXIT_INPUT
    }
}

/// Sizes the global thread pool from [`THREADS_ENV`].
pub fn configure_threads() -> anyhow::Result<()> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|e| anyhow::anyhow!("{THREADS_ENV}={v:?}: {e}"))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()?;
    Ok(())
}
