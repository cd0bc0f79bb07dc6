//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature the [`ExecPolicy::Parallel`] policy fans work out
//! over the rayon pool; without it every policy runs sequentially. Results are
//! always collected in index order, and any reduction happens afterwards in that
//! order, so both policies produce bit-identical output.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExecPolicy {
    Sequential,
    Parallel,
}

impl Default for ExecPolicy {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecPolicy::Parallel
        } else {
            ExecPolicy::Sequential
        }
    }
}

impl ExecPolicy {
    /// `(0..n).map(f)` collected in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            ExecPolicy::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Fallible map. On failure the error with the lowest index is returned,
    /// regardless of scheduling.
    pub fn try_map<T, E, F>(self, n: usize, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        self.map(n, f).into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policies_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = ExecPolicy::Sequential.map(1000, f);
        let b = ExecPolicy::Parallel.map(1000, f);
        assert_eq!(a, b);
    }

    #[test]
    fn lowest_index_error_wins() {
        let r: Result<Vec<usize>, usize> =
            ExecPolicy::Parallel.try_map(500, |i| if i % 97 == 13 { Err(i) } else { Ok(i) });
        assert_eq!(r, Err(13));
    }
}
