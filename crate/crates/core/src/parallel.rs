//! Data-parallel execution helpers.
//!
//! Hot loops (convolution, distillation distances, attention) run over the
//! batch in fixed-size chunks. With the `parallel` feature the chunks are
//! distributed over a rayon pool; without it (or after
//! [`set_parallel`]`(false)`) they run sequentially. Chunk boundaries depend
//! only on the workload, never on the thread count, and per-chunk partial
//! results are folded in chunk order, so both modes produce bit-identical
//! results.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static PARALLEL: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Runtime switch between the rayon path and the sequential fallback.
/// Has no effect when the crate is built without the `parallel` feature.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled && cfg!(feature = "parallel"), Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    PARALLEL.load(Ordering::Relaxed)
}

/// Splits `out` into chunks of `chunk_elems` elements, calls `f(chunk_index,
/// chunk)` on each, and returns the per-chunk results in chunk order.
pub fn map_chunks_mut<T, R, F>(out: &mut [T], chunk_elems: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut [T]) -> R + Sync,
{
    assert!(chunk_elems > 0);
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return out
            .par_chunks_mut(chunk_elems)
            .enumerate()
            .map(|(i, chunk)| f(i, chunk))
            .collect();
    }
    out.chunks_mut(chunk_elems)
        .enumerate()
        .map(|(i, chunk)| f(i, chunk))
        .collect()
}

/// Maps `f` over `0..n` and returns the results in index order.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Number of examples grouped into one work chunk. Fixed so that reduction
/// order does not depend on the thread count.
pub const EXAMPLES_PER_CHUNK: usize = 8;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_results_keep_order() {
        let mut buf = vec![0u32; 20];
        let partials = map_chunks_mut(&mut buf, 6, |i, chunk| {
            for v in chunk.iter_mut() {
                *v = i as u32;
            }
            i
        });
        assert_eq!(partials, vec![0, 1, 2, 3]);
        assert_eq!(buf[0], 0);
        assert_eq!(buf[6], 1);
        assert_eq!(buf[18], 3);
    }

    #[test]
    fn sequential_mode_matches() {
        let run = || {
            let mut buf = vec![1.0f64; 32];
            let sums = map_chunks_mut(&mut buf, 8, |i, chunk| {
                chunk.iter_mut().for_each(|v| *v += i as f64);
                chunk.iter().sum::<f64>()
            });
            sums.into_iter().sum::<f64>()
        };
        set_parallel(true);
        let a = run();
        set_parallel(false);
        let b = run();
        set_parallel(true);
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
