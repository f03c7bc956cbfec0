//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers run on the rayon global pool;
//! without it they are plain loops. Every reduction is split into fixed-size
//! chunks that are combined in index order, so results do not depend on the
//! number of worker threads.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by the deterministic reductions.
pub const REDUCE_CHUNK: usize = 4096;

/// Evaluates `f(i)` for `i in 0..n` and collects the results in order.
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

/// Calls `f(chunk_index, chunk)` for consecutive chunks of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk > 0);
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(k, c)| f(k, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk).enumerate().for_each(|(k, c)| f(k, c));
    }
}

/// Sums `f(i)` over `0..n` with a fixed chunked reduction order.
pub fn sum_range<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let n_chunks = n.div_ceil(REDUCE_CHUNK);
    let partial = map_range(n_chunks, |c| {
        let lo = c * REDUCE_CHUNK;
        let hi = (lo + REDUCE_CHUNK).min(n);
        (lo..hi).map(&f).sum::<f64>()
    });
    partial.iter().sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    sum_range(a.len(), |i| a[i] * b[i])
}

/// Number of worker threads the helpers will use.
pub fn current_threads() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}

/// Runs `f` on a dedicated pool with `threads` workers. Without the
/// `parallel` feature this simply calls `f`.
pub fn with_threads<R, F>(threads: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .expect("thread pool");
        pool.install(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_thread_count_independent() {
        let v: Vec<f64> = (0..20_000).map(|i| ((i as f64) * 0.37).sin()).collect();
        let one = with_threads(1, || dot(&v, &v));
        let four = with_threads(4, || dot(&v, &v));
        assert_eq!(one.to_bits(), four.to_bits());
    }

    #[test]
    fn map_range_preserves_order() {
        let v = map_range(100, |i| i * i);
        assert!(v.iter().enumerate().all(|(i, &x)| x == i * i));
    }
}
