//! Order-preserving data-parallel helpers.
//!
//! With the `parallel` feature, work is spread over the rayon pool; without it
//! (or after [`set_parallel(false)`](set_parallel)) everything runs on the
//! calling thread. Results always come back in input order, so reductions done
//! by the caller are bit-identical in both modes.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Enables or disables parallel execution at runtime. Has no effect when the
/// crate is built without the `parallel` feature.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled && cfg!(feature = "parallel"), Ordering::Relaxed);
}

pub fn is_parallel() -> bool {
    PARALLEL.load(Ordering::Relaxed)
}

/// Caps the worker count. `threads == 1` switches to sequential execution.
/// The rayon global pool can only be configured once per process; later
/// calls only toggle the sequential switch.
pub fn configure_threads(threads: usize) {
    if threads == 1 {
        set_parallel(false);
        return;
    }
    set_parallel(true);
    #[cfg(feature = "parallel")]
    {
        if threads > 1 {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build_global();
        }
    }
}

/// Maps `f` over `0..len`, returning results in index order.
pub fn map_indexed<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if len > 1 && is_parallel() {
            use rayon::prelude::*;
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    (0..len).map(f).collect()
}

/// Fallible variant of [`map_indexed`]. On failure the error of the lowest
/// failing index is returned.
pub fn try_map_indexed<T, E, F>(len: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_indexed(len, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let out = map_indexed(1000, |i| i * 2);
        assert!(out.iter().enumerate().all(|(i, v)| *v == i * 2));
    }

    #[test]
    fn first_error_wins() {
        let r: Result<Vec<usize>, usize> =
            try_map_indexed(100, |i| if i % 10 == 7 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(7));
    }
}
