//! Order-preserving map over independent tasks.
//!
//! With the `parallel` feature (default) and more than one worker the map runs
//! on a dedicated rayon pool of exactly `workers` threads; otherwise it is a
//! plain sequential iterator. Both paths return results in input order, so
//! outputs are identical for every worker count.

/// Applies `f` to every item, returning results in input order.
pub fn map_ordered<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if workers > 1 && items.len() > 1 {
            if let Some(out) = parallel::map(items, workers, &f) {
                return out;
            }
        }
    }
    let _ = workers;
    sequential(items, &f)
}

/// The sequential path, always available.
pub fn sequential<T, R, F>(items: &[T], f: &F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// Whether this build can run tasks concurrently.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(feature = "parallel")]
mod parallel {
    use rayon::prelude::*;

    pub(super) fn map<T, R, F>(items: &[T], workers: usize, f: &F) -> Option<Vec<R>>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .ok()?;
        Some(pool.install(|| items.par_iter().map(f).collect()))
    }
}
