//! Running many independent trajectories.
//!
//! Each trajectory owns its random stream `(seed, traj_id)`, so results do not
//! depend on scheduling. Results are always consumed in `traj_id` order, which
//! keeps floating-point aggregation identical between sequential and parallel runs.

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    Sequential,
    /// Uses the rayon pool when the `parallel` feature is enabled, otherwise
    /// falls back to sequential execution.
    #[default]
    Parallel,
}

impl ExecMode {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Parallel
    }
}

/// Trajectories per parallel batch in [`for_each_trajectory`].
pub const DEFAULT_BATCH: u64 = 256;

/// Runs `f(traj_id)` for `0..ntraj` and returns the results in order.
/// The first error (by `traj_id`) is returned.
pub fn map_trajectories<T, F>(ntraj: u64, mode: ExecMode, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    map_range(0, ntraj, mode, &f)
}

fn map_range<T, F>(start: u64, end: u64, mode: ExecMode, f: &F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        let results: Vec<Result<T>> = (start..end).into_par_iter().map(f).collect();
        return results.into_iter().collect();
    }
    let _ = mode;
    (start..end).map(f).collect()
}

/// Runs `f(traj_id)` for `0..ntraj` in batches and hands each result to
/// `consume` in `traj_id` order, so only one batch is held in memory.
pub fn for_each_trajectory<T, F, C>(ntraj: u64, mode: ExecMode, batch: u64, f: F, mut consume: C) -> Result<()>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
    C: FnMut(T) -> Result<()>,
{
    let batch = batch.max(1);
    let mut start = 0;
    while start < ntraj {
        let end = (start + batch).min(ntraj);
        for item in map_range(start, end, mode, &f)? {
            consume(item)?;
        }
        start = end;
    }
    Ok(())
}

/// Runs `f` inside a pool with `threads` workers (0 means the default pool).
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if threads > 0 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
            return pool.install(f);
        }
    }
    let _ = threads;
    f()
}
