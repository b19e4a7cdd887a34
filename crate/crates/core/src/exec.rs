//! Trial-level execution: data-parallel over rayon when the `parallel`
//! feature is on, a plain loop otherwise. Results always come back in trial
//! order, so reductions over them are reproducible either way.

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    /// Parallel when the `parallel` feature is enabled.
    #[default]
    Auto,
    Sequential,
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self != Execution::Sequential
    }
}

/// Evaluates `f(0), …, f(n-1)` and returns the results in index order.
pub fn map_indexed<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let seq = map_indexed(100, Execution::Sequential, |i| i * i);
        let par = map_indexed(100, Execution::Parallel, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 49);
    }
}
