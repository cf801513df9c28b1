//! Execution policy for batch work.
//!
//! Every batch entry point in the crate funnels through [`map_range`] so the
//! same code path can be benchmarked on the rayon pool and on a single thread.
//! Without the `parallel` feature, [`Execution::Parallel`] silently degrades
//! to sequential iteration. Output order always follows input order.

/// How a batch of independent jobs is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    /// One job after another on the calling thread.
    Sequential,
    /// Jobs distributed over the rayon global pool when the `parallel`
    /// feature is enabled.
    #[default]
    Parallel,
}

impl Execution {
    /// True when jobs will actually be spread over worker threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Evaluates `f(0..n)` and returns the results in index order.
pub fn map_range<R, F>(exec: Execution, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if exec == Execution::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Maps `f` over a slice, preserving order.
pub fn map_slice<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_range(exec, items.len(), |i| f(&items[i]))
}
