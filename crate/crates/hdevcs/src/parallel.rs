//! Thread-pool executor for the per-agent updates.

use hdevcs_core::exec::Executor;
use rayon::prelude::*;

/// Runs tasks on a dedicated rayon pool. Results keep input order, so a
/// solve is bitwise identical for any worker count.
pub struct ThreadPoolExecutor {
    pool: rayon::ThreadPool,
}

impl ThreadPoolExecutor {
    pub fn new(workers: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .thread_name(|i| format!("hdevcs-worker-{i}"))
            .build()?;
        Ok(ThreadPoolExecutor { pool })
    }
}

impl Executor for ThreadPoolExecutor {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        if self.pool.current_num_threads() == 1 {
            return items.iter().map(f).collect();
        }
        self.pool.install(|| items.par_iter().map(f).collect())
    }

    fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let exec = ThreadPoolExecutor::new(4).unwrap();
        let items: Vec<u64> = (0..1000).collect();
        let out = exec.map(&items, |x| x * x);
        assert_eq!(out, items.iter().map(|x| x * x).collect::<Vec<_>>());
        assert_eq!(exec.workers(), 4);
    }
}
