//! Indexed data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (default) work items are spread over the rayon
//! pool. Output order always follows the index, so a reduction over the result
//! is identical for both executors.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    #[cfg(feature = "parallel")]
    #[default]
    Parallel,
}

impl Exec {
    /// Evaluates `f(i)` for `i in 0..n`, returning results in index order.
    pub fn map<T, F>(self, n: u64, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..n).map(f).collect(),
            #[cfg(feature = "parallel")]
            Exec::Parallel => (0..n).into_par_iter().map(f).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn executors_agree() {
        let seq = Exec::Sequential.map(1000, |i| i * i);
        assert_eq!(seq, Exec::default().map(1000, |i| i * i));
        assert_eq!(seq[31], 961);
    }
}
