//! Worker-count and memory-cap settings shared by the column-parallel loops.
//!
//! `workers == 1` runs every loop on the calling thread with no thread pool
//! involved, which makes results bit-reproducible and keeps allocations on
//! one thread (the memory-discipline tests rely on this). `workers == 0`
//! uses rayon's global pool.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

pub const DEFAULT_MEM_CAP_BYTES: u64 = 4 << 30;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Exec {
    pub workers: usize,
    pub mem_cap_bytes: u64,
}

impl Default for Exec {
    fn default() -> Self {
        Exec {
            workers: 0,
            mem_cap_bytes: DEFAULT_MEM_CAP_BYTES,
        }
    }
}

impl Exec {
    pub fn sequential() -> Self {
        Exec::with_workers(1)
    }

    pub fn with_workers(workers: usize) -> Self {
        Exec {
            workers,
            ..Exec::default()
        }
    }

    pub fn mem_cap(mut self, bytes: u64) -> Self {
        self.mem_cap_bytes = bytes;
        self
    }

    /// Effective number of threads a parallel loop may use.
    pub fn effective_workers(&self) -> usize {
        match self.workers {
            0 => rayon::current_num_threads(),
            n => n,
        }
    }

    fn install<R: Send>(&self, op: impl FnOnce() -> R + Send) -> R {
        match self.workers {
            0 => op(),
            n => pool(n).install(op),
        }
    }

    /// `(0..n).map(f)`, order preserved.
    pub(crate) fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        if self.workers == 1 {
            return (0..n).map(f).collect();
        }
        self.install(|| (0..n).into_par_iter().map(f).collect())
    }

    /// Fold over `0..n` with per-worker accumulators merged at the end.
    pub(crate) fn fold<A, I, S, M>(&self, n: usize, init: I, step: S, merge: M) -> A
    where
        A: Send,
        I: Fn() -> A + Sync + Send,
        S: Fn(A, usize) -> A + Sync + Send,
        M: Fn(A, A) -> A + Sync + Send,
    {
        if self.workers == 1 {
            return (0..n).fold(init(), step);
        }
        self.install(|| {
            (0..n)
                .into_par_iter()
                .fold(&init, &step)
                .reduce(&init, &merge)
        })
    }
}

fn pool(workers: usize) -> Arc<ThreadPool> {
    static POOLS: OnceLock<Mutex<HashMap<usize, Arc<ThreadPool>>>> = OnceLock::new();
    let mut pools = POOLS
        .get_or_init(Default::default)
        .lock()
        .unwrap_or_else(|e| e.into_inner());
    pools
        .entry(workers)
        .or_insert_with(|| {
            Arc::new(
                ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .expect("failed to build worker pool"),
            )
        })
        .clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order_for_any_worker_count() {
        for w in [0, 1, 3] {
            let out = Exec::with_workers(w).map(100, |i| i * i);
            assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn fold_sums() {
        for w in [0, 1, 2] {
            let s = Exec::with_workers(w).fold(1000, || 0u64, |a, i| a + i as u64, |a, b| a + b);
            assert_eq!(s, 999 * 1000 / 2);
        }
    }
}
