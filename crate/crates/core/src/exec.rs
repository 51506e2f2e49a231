//! Execution strategy for the data-parallel kernels.
//!
//! Every parallel site in this crate maps an index range to independent
//! partial results and combines them in index order, so the parallel and
//! sequential paths produce bitwise-identical output. With the `parallel`
//! feature disabled the parallel mode silently degrades to the sequential
//! path.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// Single-threaded reference path.
    Sequential,
    /// rayon work-stealing across chunks (needs the `parallel` feature).
    #[default]
    Parallel,
}

impl ExecMode {
    /// Evaluates `f` on `0..count` and returns the results in index order.
    pub fn map_indexed<T, F>(self, count: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == ExecMode::Parallel {
            use rayon::prelude::*;
            return (0..count).into_par_iter().map(f).collect();
        }
        (0..count).map(f).collect()
    }
}
