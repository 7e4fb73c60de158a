//! Worker-count control for data-parallel stages.

use rayon::ThreadPoolBuilder;

/// Runs `f` on a dedicated pool of `workers` threads. `0` means one worker
/// per available core.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    let threads =
        if workers == 0 { std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1) } else { workers };
    match ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        // Thread spawning can fail under tight ulimits; run inline.
        Err(_) => f(),
    }
}
