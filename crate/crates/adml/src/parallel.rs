//! Data-parallel map helpers. With the `parallel` feature (default) these
//! fan work out over rayon; without it they degrade to plain sequential
//! iteration with identical results, since outputs are collected in input
//! order either way.

/// Map over `items` with up to `threads` workers, preserving input order.
/// `threads <= 1` runs inline without touching a thread pool.
#[cfg(feature = "parallel")]
pub(crate) fn map_indexed<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(&f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_indexed<T, R, F>(items: &[T], _threads: usize, f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(&f).collect()
}

/// Map over `items` on the global pool (all cores), preserving input order.
#[cfg(feature = "parallel")]
pub(crate) fn map_shared<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    use rayon::prelude::*;
    items.par_iter().map(&f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_shared<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(&f).collect()
}
