//! Order-preserving data-parallel helpers.
//!
//! Every helper returns results in input order, and reductions are performed
//! sequentially over per-item (or fixed-size chunk) results, so floating-point
//! output does not depend on the thread count or on the `parallel` feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by [`map_chunks`]. Fixed so sums are reproducible.
pub const CHUNK: usize = 64;

/// Maps `f` over `0..n`, preserving order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Maps `f` over a slice, preserving order.
pub fn map<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Maps `f` over consecutive chunks of [`CHUNK`] items.
pub fn map_chunks<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&[S]) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_chunks(CHUNK).map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.chunks(CHUNK).map(f).collect()
    }
}

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
