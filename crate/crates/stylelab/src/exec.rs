//! Rayon-backed executor.

use rayon::prelude::*;
use stylelab_core::exec::Executor;

use crate::error::AppResult;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "STYLELAB_THREADS";

/// Runs per-example work on a dedicated rayon pool. Output order matches
/// input order, so results do not depend on the thread count.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    pub fn new(threads: Option<usize>) -> AppResult<Self> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            b = b.num_threads(n.max(1));
        }
        Ok(Self { pool: b.build()? })
    }

    /// Honors `STYLELAB_THREADS` when set to a positive integer.
    pub fn from_env() -> AppResult<Self> {
        let threads = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|n| *n > 0);
        Self::new(threads)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for RayonExecutor {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        self.pool.install(|| items.par_iter().map(f).collect())
    }
}
