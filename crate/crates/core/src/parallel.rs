//! Order-preserving parallel map over independent jobs.
//!
//! The worker count comes from the `HUB_WORKERS` environment variable and
//! defaults to the number of available cores. Results are returned in input
//! order, so output never depends on scheduling.

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "HUB_WORKERS";

/// Worker count requested through [`WORKERS_ENV`], if set and valid.
pub fn configured_workers() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

#[cfg(feature = "parallel")]
pub fn map_ordered<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    match configured_workers() {
        Some(1) => items.into_iter().map(f).collect(),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| items.into_par_iter().map(f).collect()),
            Err(e) => {
                log::warn!("could not build a pool of {n} workers ({e}); using the global pool");
                items.into_par_iter().map(f).collect()
            }
        },
        None => items.into_par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_ordered<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    F: Fn(T) -> U,
{
    items.into_iter().map(f).collect()
}
