//! Execution-mode switch between rayon data parallelism and a sequential fallback.
//!
//! With the default `parallel` feature the `Parallel` mode fans work out over the
//! rayon thread pool; without the feature (or in `Sequential` mode) the same closures
//! run on the calling thread. All workloads routed through here are pure maps over
//! independent items, so both modes produce bitwise identical results.

/// How to execute a batch of independent work items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ExecMode {
    Sequential,
    /// Rayon thread pool when the `parallel` feature is enabled; otherwise
    /// falls back to sequential execution.
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        ExecMode::Parallel
    }
}

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<T, F>(mode: ExecMode, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if mode == ExecMode::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = mode;
    (0..n).map(f).collect()
}
