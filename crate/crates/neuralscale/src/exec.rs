//! Data-parallel execution helpers.
//!
//! Hot loops hand out disjoint output slices, each computed by a pure
//! function of shared inputs, so the parallel and sequential paths produce
//! bit-identical results: every reduction happens in a fixed order inside
//! the slice that owns it. The `parallel` feature pulls in rayon; without it
//! the same helpers degrade to plain loops. A runtime switch covers the
//! remaining cases (benchmarks comparing both paths, `--deterministic`).

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static PARALLEL_ENABLED: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Enable or disable the rayon path at runtime. No-op without the `parallel`
/// feature. Results are bit-identical either way.
pub fn set_parallel(enabled: bool) {
    PARALLEL_ENABLED.store(enabled && cfg!(feature = "parallel"), Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    PARALLEL_ENABLED.load(Ordering::Relaxed)
}

/// Run `f(chunk_index, chunk)` over disjoint chunks of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    debug_assert!(chunk_len > 0);
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    for (i, c) in data.chunks_mut(chunk_len).enumerate() {
        f(i, c);
    }
}

/// Ordered map over an index range; the output Vec preserves index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}
