//! Batch execution strategy. With the `parallel` feature, [`Execution::Parallel`]
//! maps over a rayon pool; without it, every strategy runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Workers for batches whose time is spent waiting on model calls, where a
/// pool sized to the CPU count would leave the endpoint idle.
pub const REQUEST_WORKERS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this build actually runs `Parallel` on multiple threads.
    pub const fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }

    /// Order-preserving map.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Order-preserving map on a pool capped at `threads` workers.
    pub fn map_bounded<T, R, F>(self, threads: usize, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel && threads > 1 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                return pool.install(|| items.par_iter().map(f).collect());
            }
        }
        let _ = threads;
        items.iter().map(f).collect()
    }
}
