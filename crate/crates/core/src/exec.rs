//! Data-parallel execution with a sequential fallback.
//!
//! Every helper here returns results in input order, so callers get the same
//! bits whether the work ran on the rayon pool or on the calling thread.
//! Parallel execution needs the `parallel` feature; without it, or when
//! [`ExecMode::Sequential`] is selected at runtime, everything runs inline.

use std::sync::atomic::{AtomicU8, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Parallel,
    Sequential,
}

static MODE: AtomicU8 = AtomicU8::new(0);

pub fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}

/// The mode currently in effect. Always `Sequential` when built without the
/// `parallel` feature.
pub fn mode() -> ExecMode {
    if !parallel_available() || MODE.load(Ordering::Relaxed) == 1 {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    }
}

pub fn set_mode(mode: ExecMode) {
    MODE.store(
        match mode {
            ExecMode::Parallel => 0,
            ExecMode::Sequential => 1,
        },
        Ordering::Relaxed,
    );
}

/// Runs `f` with `mode` selected, restoring the previous mode afterwards.
pub fn with_mode<R>(mode: ExecMode, f: impl FnOnce() -> R) -> R {
    let prev = self::mode();
    set_mode(mode);
    let out = f();
    set_mode(prev);
    out
}

/// `(0..n).map(f)` collected in order.
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == ExecMode::Parallel && n > 1 {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// `items.iter().map(f)` collected in order.
pub fn map_slice<A, T, F>(items: &[A], f: F) -> Vec<T>
where
    A: Sync,
    T: Send,
    F: Fn(&A) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == ExecMode::Parallel && items.len() > 1 {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Mutably visits every element of `items`.
pub fn for_each_mut<A, F>(items: &mut [A], f: F)
where
    A: Send,
    F: Fn(usize, &mut A) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == ExecMode::Parallel && items.len() > 1 {
        use rayon::prelude::*;
        items.par_iter_mut().enumerate().for_each(|(i, a)| f(i, a));
        return;
    }
    items.iter_mut().enumerate().for_each(|(i, a)| f(i, a));
}

/// Runs `f` over `0..n` with at most `workers` jobs in flight, collecting
/// results in index order. Used for coarse-grained work such as whole
/// experiments.
pub fn run_queue<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode() == ExecMode::Parallel && workers > 1 && n > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            return pool.install(|| (0..n).into_par_iter().with_max_len(1).map(&f).collect());
        }
    }
    let _ = workers;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved_in_both_modes() {
        let seq = with_mode(ExecMode::Sequential, || map_range(100, |i| i * i));
        let par = with_mode(ExecMode::Parallel, || map_range(100, |i| i * i));
        assert_eq!(seq, par);
        assert_eq!(seq[7], 49);
        let q = run_queue(10, 3, |i| i + 1);
        assert_eq!(q, (1..=10).collect::<Vec<_>>());
    }

    #[test]
    fn for_each_mut_visits_all() {
        let mut v = vec![0usize; 33];
        for_each_mut(&mut v, |i, x| *x = i * 2);
        assert!(v.iter().enumerate().all(|(i, &x)| x == 2 * i));
    }
}
