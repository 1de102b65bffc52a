//! Kernel thread pool, capped by the `NCGL_THREADS` environment variable.
//!
//! Kernels split work by output row, so results do not depend on the
//! number of threads.

use std::sync::OnceLock;

static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

/// Number of kernel threads: `NCGL_THREADS` if set and positive, else the
/// number of available cores.
pub fn threads() -> usize {
    pool().current_num_threads()
}

/// Fixes the pool size before first use. Returns false if the pool was
/// already built with a different size.
pub fn init_threads(n: usize) -> bool {
    let n = n.max(1);
    POOL.get_or_init(|| build(n)).current_num_threads() == n
}

fn build(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .expect("kernel thread pool")
}

pub(crate) fn pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        let n = std::env::var("NCGL_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        build(n)
    })
}
