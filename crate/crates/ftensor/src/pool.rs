use ftensor_core::Executor;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::Result;

/// Executor backed by a dedicated rayon pool.
pub struct RayonExecutor {
    pool: ThreadPool,
}

impl RayonExecutor {
    /// `workers == 0` means available parallelism.
    pub fn new(workers: usize) -> Result<Self> {
        let workers = if workers == 0 { default_workers() } else { workers };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
        Ok(Self { pool })
    }
}

impl Executor for RayonExecutor {
    fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    fn for_each_mut<T, F>(&self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(&mut T) + Sync + Send,
    {
        if items.len() <= 1 || self.workers() == 1 {
            items.iter_mut().for_each(f);
            return;
        }
        self.pool.install(|| items.par_iter_mut().with_min_len(1).for_each(f));
    }
}

impl std::fmt::Debug for RayonExecutor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RayonExecutor").field("workers", &self.workers()).finish()
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn visits_every_item_once() {
        let exec = RayonExecutor::new(4).unwrap();
        assert_eq!(exec.workers(), 4);
        let calls = AtomicUsize::new(0);
        let mut items: Vec<usize> = (0..1000).collect();
        exec.for_each_mut(&mut items, |x| {
            *x *= 2;
            calls.fetch_add(1, Ordering::Relaxed);
        });
        assert_eq!(calls.into_inner(), 1000);
        assert!(items.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }

    #[test]
    fn zero_means_default() {
        assert_eq!(RayonExecutor::new(0).unwrap().workers(), default_workers());
    }
}
