//! Data-parallel map with a sequential fallback.
//!
//! Built with the `parallel` feature (default), [`map_indexed`] fans out over
//! rayon; without it, or inside [`with_sequential`], it runs a plain loop.
//! Both paths produce results in index order, so callers are bitwise
//! reproducible either way — the feature only changes wall-clock time.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with parallel dispatch disabled on this thread.
///
/// Used by benchmarks to compare both execution paths in one binary, and by
/// tests asserting that parallel and sequential runs agree bit-for-bit.
pub fn with_sequential<T>(f: impl FnOnce() -> T) -> T {
    FORCE_SEQUENTIAL.with(|flag| {
        let prev = flag.replace(true);
        let out = f();
        flag.set(prev);
        out
    })
}

/// True when a [`map_indexed`] call on this thread would dispatch to rayon.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.with(Cell::get)
}

/// Maps `f` over `0..n`, returning results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    (0..n).map(f).collect()
}
