//! Reproducible per-path random streams and the data-parallel path executor.
//!
//! Every path draws from its own ChaCha stream selected by `(seed, index)`,
//! so a population is bit-identical whatever the worker count or scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{LabError, Result};

/// Random stream dedicated to path `index` of a population seeded by `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// How a population of independent paths is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Executor {
    /// Evaluate paths one after another on the calling thread.
    Sequential,
    /// Evaluate paths on a rayon pool; `None` uses the global pool. Without the
    /// `parallel` feature this falls back to sequential evaluation.
    #[default]
    Parallel,
    /// A dedicated pool with the given number of worker threads.
    Workers(usize),
}

impl Executor {
    /// Executor for an optional `--workers` style setting (0 or `None` = global pool).
    pub fn from_workers(workers: Option<usize>) -> Self {
        match workers {
            Some(1) => Executor::Sequential,
            Some(n) if n > 1 => Executor::Workers(n),
            _ => Executor::Parallel,
        }
    }

    /// Apply `f` to `0..n`, returning results in index order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Executor::Sequential => (0..n).map(f).collect(),
            Executor::Parallel => parallel_map(n, f),
            Executor::Workers(w) => with_pool(*w, || parallel_map(n, f)),
        }
    }

    /// Fallible variant of [`Executor::map`]; the first error in index order wins.
    pub fn try_map<T, F>(&self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> Result<T> + Sync + Send,
    {
        self.map(n, f).into_iter().collect()
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
fn with_pool<T: Send, F: FnOnce() -> T + Send>(workers: usize, f: F) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("could not build a {workers}-thread pool ({e}); using the global pool");
            f()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn with_pool<T: Send, F: FnOnce() -> T + Send>(_workers: usize, f: F) -> T {
    f()
}

/// Reject a configuration value with a descriptive message.
pub(crate) fn config_error<T>(msg: impl Into<String>) -> Result<T> {
    Err(LabError::Config(msg.into()))
}
