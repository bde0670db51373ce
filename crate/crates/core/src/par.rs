//! Data-parallel sweeps over independent work items.
//!
//! With the `parallel` feature (default) [`sweep`] fans out over the rayon
//! pool; without it, it runs in order on the calling thread. Results are
//! always returned in input order, so both builds produce identical output.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub const PARALLEL: bool = cfg!(feature = "parallel");

#[cfg(feature = "parallel")]
pub fn sweep<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn sweep<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    sweep_sequential(items, f)
}

/// Always sequential, whatever the features.
pub fn sweep_sequential<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    items.iter().map(f).collect()
}

/// [`sweep`] over `0..n`.
pub fn sweep_range<R, F>(n: u64, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(u64) -> R + Sync + Send,
{
    let idx: Vec<u64> = (0..n).collect();
    sweep(&idx, |i| f(*i))
}
