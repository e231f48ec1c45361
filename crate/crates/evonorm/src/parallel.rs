//! Worker-pool helper. Candidate evaluations are self-contained, so a
//! plain data-parallel map is all the search needs; per-candidate seeding
//! keeps results identical for any worker count.

use rayon::ThreadPool;

/// Build a pool with the requested worker count (minimum one).
pub fn pool(workers: usize) -> ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool builds")
}
