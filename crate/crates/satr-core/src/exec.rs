//! Execution backend: data-parallel loops with a sequential fallback.
//!
//! With the `parallel` feature (default) the helpers fan work out over rayon.
//! Chunk boundaries are fixed constants, never derived from the thread count,
//! and cross-chunk reductions happen on the calling thread in chunk order, so
//! results are bit-identical regardless of thread scheduling and identical to
//! the sequential build.

use std::sync::atomic::{AtomicBool, Ordering};

/// Examples per work unit for batch-level ops.
pub(crate) const EXAMPLE_CHUNK: usize = 4;
/// Rows per work unit for feature-wise reductions.
pub(crate) const ROW_CHUNK: usize = 1024;

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Run `f` with all crate-internal parallelism disabled.
///
/// Exists so a single binary (benchmarks, profiling) can compare the rayon
/// path against the sequential one. With the `parallel` feature off this is
/// a plain call.
pub fn run_sequential<R>(f: impl FnOnce() -> R) -> R {
    FORCE_SEQUENTIAL.store(true, Ordering::SeqCst);
    let out = f();
    FORCE_SEQUENTIAL.store(false, Ordering::SeqCst);
    out
}

#[cfg(feature = "parallel")]
fn parallel_enabled() -> bool {
    !FORCE_SEQUENTIAL.load(Ordering::Relaxed)
}

/// Map fixed-size chunks of `items` to results, in chunk order.
pub(crate) fn map_chunks<T, R>(
    items: &[T],
    chunk: usize,
    f: impl Fn(usize, &[T]) -> R + Sync,
) -> Vec<R>
where
    T: Sync,
    R: Send,
{
    debug_assert!(chunk > 0);
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() {
            use rayon::prelude::*;
            return items
                .par_chunks(chunk)
                .enumerate()
                .map(|(i, c)| f(i * chunk, c))
                .collect();
        }
    }
    items
        .chunks(chunk)
        .enumerate()
        .map(|(i, c)| f(i * chunk, c))
        .collect()
}

/// Apply `f` to aligned chunks of an input and an output slice.
///
/// `in_stride` input elements map to `out_stride` output elements per item;
/// chunks hold `EXAMPLE_CHUNK` items. Output chunks are disjoint, so this is
/// deterministic without any reduction.
pub(crate) fn for_each_aligned_chunk(
    input: &[f64],
    in_stride: usize,
    output: &mut [f64],
    out_stride: usize,
    f: impl Fn(usize, &[f64], &mut [f64]) + Sync,
) {
    debug_assert_eq!(input.len() % in_stride.max(1), 0);
    #[cfg(feature = "parallel")]
    {
        if parallel_enabled() {
            use rayon::prelude::*;
            let chunk = EXAMPLE_CHUNK;
            output
                .par_chunks_mut(out_stride * chunk)
                .zip(input.par_chunks(in_stride * chunk))
                .enumerate()
                .for_each(|(i, (o, inp))| {
                    for (j, (oc, ic)) in o
                        .chunks_mut(out_stride)
                        .zip(inp.chunks(in_stride))
                        .enumerate()
                    {
                        f(i * chunk + j, ic, oc);
                    }
                });
            return;
        }
    }
    for (n, (oc, ic)) in output
        .chunks_mut(out_stride)
        .zip(input.chunks(in_stride))
        .enumerate()
    {
        f(n, ic, oc);
    }
}
