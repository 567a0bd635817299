//! Data-parallel helpers.
//!
//! With the `parallel` feature enabled and `workers > 1`, work is spread over a
//! rayon pool sized to `workers`. Otherwise everything runs on the calling
//! thread. Results are always returned in input order, so callers that derive
//! per-item randomness from the item index get identical output for any worker
//! count.

#[cfg(feature = "parallel")]
use std::{
    collections::HashMap,
    sync::{Arc, Mutex, OnceLock},
};

#[cfg(feature = "parallel")]
fn pool(workers: usize) -> Arc<rayon::ThreadPool> {
    static POOLS: OnceLock<Mutex<HashMap<usize, Arc<rayon::ThreadPool>>>> = OnceLock::new();
    let mut pools = POOLS
        .get_or_init(|| Mutex::new(HashMap::new()))
        .lock()
        .unwrap_or_else(|e| e.into_inner());
    pools
        .entry(workers)
        .or_insert_with(|| {
            Arc::new(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .expect("failed to build worker pool"),
            )
        })
        .clone()
}

/// Whether this build can run work on more than one thread.
pub const fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

/// Maps `f` over `items` with their indices, preserving order.
pub fn map_indexed<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers > 1 && items.len() > 1 {
        use rayon::prelude::*;
        return pool(workers).install(|| {
            items
                .par_iter()
                .enumerate()
                .map(|(i, item)| f(i, item))
                .collect()
        });
    }
    let _ = workers;
    items.iter().enumerate().map(|(i, item)| f(i, item)).collect()
}

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<R, F>(n: usize, workers: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers > 1 && n > 1 {
        use rayon::prelude::*;
        return pool(workers).install(|| (0..n).into_par_iter().map(&f).collect());
    }
    let _ = workers;
    (0..n).map(f).collect()
}
