//! Order-preserving map over slices and ranges.
//!
//! With the `parallel` feature the work is spread over the rayon pool; the
//! output order (and therefore every downstream reduction) is identical in
//! both modes, so results are bit-for-bit reproducible regardless of the
//! execution mode or thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a data-parallel loop should be executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// Use the rayon pool when compiled with `parallel`, otherwise sequential.
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Sum in index order. Used for all floating-point reductions so the result
/// does not depend on how the parallel map was scheduled.
pub fn ordered_sum(values: &[f64]) -> f64 {
    values.iter().sum()
}
