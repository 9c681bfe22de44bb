//! Execution policy for the data-parallel loops in assembly.
//!
//! Every parallel map collects results in input order and all reductions
//! happen afterwards in a fixed sequential order, so `Sequential` and
//! `Parallel` produce bit-identical output.

/// How independent work items are scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Rayon work stealing. Without the `parallel` feature this runs sequentially.
    #[default]
    Parallel,
}

impl Exec {
    /// Whether this policy will actually use worker threads in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Order-preserving map over `0..len`.
    pub fn map_range<R, F>(self, len: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return (0..len).into_par_iter().map(f).collect();
        }
        (0..len).map(f).collect()
    }
}
