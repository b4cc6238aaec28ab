//! Ordered data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature, work items are spread over a rayon pool of
//! the requested size. Output order always follows item order.

use std::ops::Range;

/// Trajectory ids per lockstep chunk. Fixed so results never depend on workers.
pub const CHUNK: u64 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exec {
    /// 0 = all available cores, 1 = sequential.
    pub workers: usize,
}

impl Exec {
    pub const SEQUENTIAL: Exec = Exec { workers: 1 };

    pub fn new(workers: usize) -> Self {
        Exec { workers }
    }

    pub fn is_parallel(&self) -> bool {
        cfg!(feature = "parallel") && self.workers != 1
    }
}

impl Default for Exec {
    fn default() -> Self {
        Exec { workers: 0 }
    }
}

pub fn map_indexed<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(exec.workers).build().expect("thread pool");
        return pool.install(|| (0..n).into_par_iter().map(&f).collect());
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Split `ids` into `CHUNK`-aligned ranges and map each, preserving order.
pub fn map_chunks<T, F>(exec: Exec, ids: Range<u64>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<u64>) -> T + Sync + Send,
{
    let chunks = chunk_ranges(ids);
    map_indexed(exec, chunks.len(), |k| f(chunks[k].clone()))
}

pub fn chunk_ranges(ids: Range<u64>) -> Vec<Range<u64>> {
    let mut out = Vec::new();
    let mut s = ids.start;
    while s < ids.end {
        let e = ((s / CHUNK + 1) * CHUNK).min(ids.end);
        out.push(s..e);
        s = e;
    }
    out
}
