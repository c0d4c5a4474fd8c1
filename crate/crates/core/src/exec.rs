//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over the rayon pool;
//! without it, or while [`Mode::Sequential`] is forced, the same closures run
//! in order on the calling thread. Every helper preserves input order and all
//! reductions are performed sequentially afterwards, so results are
//! bit-identical in both modes.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Parallel,
    Sequential,
}

/// The mode helpers will use right now.
pub fn mode() -> Mode {
    if cfg!(feature = "parallel") && !FORCE_SEQUENTIAL.load(Ordering::Relaxed) {
        Mode::Parallel
    } else {
        Mode::Sequential
    }
}

/// Process-wide override. Used by the benches to compare both paths in one binary.
pub fn set_mode(mode: Mode) {
    FORCE_SEQUENTIAL.store(mode == Mode::Sequential, Ordering::Relaxed);
}

/// Runs `f` with the given mode, restoring the previous one afterwards.
pub fn with_mode<R>(m: Mode, f: impl FnOnce() -> R) -> R {
    let prev = mode();
    set_mode(m);
    let out = f();
    set_mode(prev);
    out
}

/// Ordered map over a slice.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Ordered map over `0..n`.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Applies `f` to disjoint mutable chunks of `data`, passing each chunk's index.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// Sizes the worker pool. One worker selects the sequential mode; zero
/// keeps the default (one thread per core). Only the first call that
/// builds a pool has an effect on its size.
pub fn configure_workers(n: usize) {
    if n == 1 {
        set_mode(Mode::Sequential);
        return;
    }
    #[cfg(feature = "parallel")]
    if n > 1 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("worker pool already initialized: {e}");
        }
    }
}

/// Number of worker threads the parallel mode would use.
pub fn workers() -> usize {
    #[cfg(feature = "parallel")]
    if mode() == Mode::Parallel {
        return rayon::current_num_threads();
    }
    1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order_in_both_modes() {
        let xs: Vec<u64> = (0..1000).collect();
        let par = with_mode(Mode::Parallel, || map(&xs, |x| x * x));
        let seq = with_mode(Mode::Sequential, || map(&xs, |x| x * x));
        assert_eq!(par, seq);
        assert_eq!(par[999], 999 * 999);
    }

    #[test]
    fn chunked_mutation_covers_everything() {
        let mut v = vec![0usize; 103];
        for_each_chunk_mut(&mut v, 10, |i, c| c.iter_mut().for_each(|x| *x = i));
        assert_eq!(v[0], 0);
        assert_eq!(v[102], 10);
    }
}
