//! Data-parallel fan-out with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over a rayon pool;
//! without it the same entry points run sequentially. Callers pass an
//! explicit worker count: 0 means "the default pool", 1 forces sequential
//! execution even when the feature is on.

/// Maps `f` over `0..n`, preserving order.
#[cfg(feature = "parallel")]
pub fn map_indices<T: Send>(
    n: usize,
    workers: usize,
    f: impl Fn(usize) -> T + Sync + Send,
) -> Vec<T> {
    use rayon::prelude::*;
    match workers {
        1 => (0..n).map(f).collect(),
        0 => (0..n).into_par_iter().map(f).collect(),
        w => match rayon::ThreadPoolBuilder::new().num_threads(w).build() {
            Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
            Err(_) => (0..n).map(f).collect(),
        },
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_indices<T: Send>(
    n: usize,
    _workers: usize,
    f: impl Fn(usize) -> T + Sync + Send,
) -> Vec<T> {
    (0..n).map(f).collect()
}

/// True when `map_indices` can actually fan out.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
