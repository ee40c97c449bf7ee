//! Execution-mode switch between rayon data parallelism and a sequential
//! fallback.
//!
//! Batch-level work (per-sentence tapes, ablation rows) is embarrassingly
//! parallel; everything inside one tape stays single-threaded. Results are
//! collected in input order regardless of mode, so the two modes produce
//! identical output and any reduction over the collected vector is
//! deterministic. With the `parallel` feature disabled,
//! [`ExecMode::Parallel`] quietly degrades to sequential execution.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How batch-level loops run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

impl ExecMode {
    /// Map `f` over `items`, preserving input order in the output.
    pub fn map<T, U, F>(self, items: &[T], f: F) -> Vec<U>
    where
        T: Sync,
        U: Send,
        F: Fn(&T) -> U + Sync + Send,
    {
        match self {
            ExecMode::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            ExecMode::Parallel => items.par_iter().map(f).collect(),
            #[cfg(not(feature = "parallel"))]
            ExecMode::Parallel => items.iter().map(f).collect(),
        }
    }

    /// Map `f` over an index range, preserving index order in the output.
    pub fn map_indices<U, F>(self, n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        match self {
            ExecMode::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            ExecMode::Parallel => (0..n).into_par_iter().map(f).collect(),
            #[cfg(not(feature = "parallel"))]
            ExecMode::Parallel => (0..n).map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_preserve_order() {
        let items: Vec<u64> = (0..257).collect();
        let seq = ExecMode::Sequential.map(&items, |&x| x * x + 1);
        let par = ExecMode::Parallel.map(&items, |&x| x * x + 1);
        assert_eq!(seq, par);
        assert_eq!(seq[3], 10);
    }

    #[test]
    fn index_map_modes_agree() {
        let seq = ExecMode::Sequential.map_indices(100, |i| i as f64 * 0.5);
        let par = ExecMode::Parallel.map_indices(100, |i| i as f64 * 0.5);
        assert_eq!(seq, par);
    }
}
