//! Thread-pool executor for per-query work.

use pillar_rerank_core::exec::Executor;
use rayon::prelude::*;

/// Runs work on a dedicated rayon pool. Results come back in index order,
/// so output does not depend on the worker count.
pub struct PoolExecutor {
    pool: rayon::ThreadPool,
}

impl PoolExecutor {
    /// `threads = 0` uses one worker per available core.
    pub fn new(threads: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
        Ok(Self { pool })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for PoolExecutor {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use pillar_rerank_core::exec::Sequential;

    #[test]
    fn matches_sequential_order() {
        let f = |i: usize| (i * 7919 % 101) as f64 / 3.0;
        let want = Sequential.map(1000, f);
        for t in [1, 3, 8] {
            assert_eq!(PoolExecutor::new(t).unwrap().map(1000, f), want);
        }
    }
}
