//! Pipeline commands behind the `porenet` binary: synthetic data, training,
//! detection, evaluation and threshold sweeps.

pub mod commands;
pub mod config;
pub mod summary;

pub use commands::{
    cmd_detect, cmd_eval, cmd_sweep, cmd_synth, cmd_train, DetectOutputs, EvalReport,
    OperatingPoint, SweepReport, TrainReport,
};
pub use config::{Preset, RunConfig};
pub use summary::{RunSummary, Status};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "PORENET_THREADS";

/// Sizes the global worker pool. Has no effect without the `parallel`
/// feature or once the pool has been used.
pub fn configure_threads(threads: Option<usize>) -> anyhow::Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| anyhow::anyhow!("configuring {n} threads: {e}"))?;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

/// Keeps freed buffers of any size in the process heap instead of returning
/// them to the kernel.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator thresholds.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, i32::MAX);
    }
}
