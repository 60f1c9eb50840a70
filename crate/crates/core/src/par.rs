//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature these dispatch to rayon; without it they run
//! on the calling thread. Every helper returns results in index order and
//! every floating point reduction is performed over fixed-size chunks whose
//! partial sums are combined sequentially, so results do not depend on the
//! number of worker threads.

/// Chunk length for reductions. Part of the numeric contract: changing it
/// changes the last bits of dot products.
pub const REDUCE_CHUNK: usize = 4096;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `(0..len).map(f).collect()`, possibly in parallel. Output order is index order.
pub fn map_indexed<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// Map over a slice, preserving order.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
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

/// Fill `out[i] = f(i)` for every index.
pub fn fill_indexed<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(REDUCE_CHUNK)
            .enumerate()
            .for_each(|(c, chunk)| {
                let base = c * REDUCE_CHUNK;
                for (i, o) in chunk.iter_mut().enumerate() {
                    *o = f(base + i);
                }
            });
    }
    #[cfg(not(feature = "parallel"))]
    {
        for (i, o) in out.iter_mut().enumerate() {
            *o = f(i);
        }
    }
}

/// Deterministic sum of `f(i)` for `i in 0..len`.
pub fn sum_indexed<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = len.div_ceil(REDUCE_CHUNK);
    let partial = map_indexed(chunks, |c| {
        let lo = c * REDUCE_CHUNK;
        let hi = (lo + REDUCE_CHUNK).min(len);
        let mut s = 0.0;
        for i in lo..hi {
            s += f(i);
        }
        s
    });
    partial.into_iter().sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    sum_indexed(a.len(), |i| a[i] * b[i])
}
