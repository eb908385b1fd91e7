//! Experiment runner for the collapse laboratory: flat configuration files,
//! shipped presets, streaming NDJSON output, checkpoint/resume and the
//! post-run analysis pipeline.

// Validation writes `!(x > 0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod checkpoint;
pub mod config;
pub mod output;
pub mod presets;
pub mod runner;

pub use analyze::{analyze, AnalyzeOptions, Report};
pub use config::RunConfig;
pub use runner::{resume, run, RunOptions, RunOutcome, Status};

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "COLLAPSE_LAB_THREADS";

/// Sizes the global thread pool from [`THREADS_ENV`], if set.
pub fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got `{raw}`"))?;
    if n == 0 {
        anyhow::bail!("{THREADS_ENV} must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}
