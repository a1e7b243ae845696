//! Data-parallel fan-out with a sequential fallback.
//!
//! With the `parallel` feature (default) [`Parallelism::Parallel`] runs on
//! a dedicated rayon pool; without it every request degrades to a plain
//! sequential loop. Results always come back in input order.
//!
//! Fan-out is mostly waiting on provider calls, so the pool is not sized to
//! the CPU count: it has at least [`MIN_THREADS`] threads, or
//! `SEMCOMMIT_THREADS` if set.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    Sequential,
    Parallel,
}

impl Default for Parallelism {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Parallelism::Parallel
        } else {
            Parallelism::Sequential
        }
    }
}

impl Parallelism {
    /// Whether this setting actually runs in parallel in the current build.
    pub fn is_effective(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

pub const MIN_THREADS: usize = 8;
pub const ENV_THREADS: &str = "SEMCOMMIT_THREADS";

#[cfg(feature = "parallel")]
fn pool() -> &'static rayon::ThreadPool {
    static POOL: std::sync::OnceLock<rayon::ThreadPool> = std::sync::OnceLock::new();
    POOL.get_or_init(|| {
        let threads = std::env::var(ENV_THREADS)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()).max(MIN_THREADS));
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("semcommit-fanout-{i}"))
            .build()
            .expect("fan-out pool starts")
    })
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(items: &[T], mode: Parallelism, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == Parallelism::Parallel {
        use rayon::prelude::*;
        return pool().install(|| items.par_iter().map(f).collect());
    }
    let _ = mode;
    items.iter().map(f).collect()
}
