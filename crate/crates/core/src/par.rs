//! Row-parallel helpers. Each row is reduced in a fixed order, so parallel
//! and sequential runs produce identical bits.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Calls `f(row_index, row)` for every `width`-sized row of `out`.
pub(crate) fn for_each_row<F>(out: &mut [f64], width: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    out.par_chunks_mut(width)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
    #[cfg(not(feature = "parallel"))]
    out.chunks_mut(width)
        .enumerate()
        .for_each(|(i, row)| f(i, row));
}

/// Caps the worker count of the global pool. Only the first call has any
/// effect; later calls are ignored.
#[cfg(feature = "parallel")]
pub fn set_thread_limit(threads: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build_global();
}

#[cfg(not(feature = "parallel"))]
pub fn set_thread_limit(_threads: usize) {}
