//! Data-parallel batch execution with a sequential fallback.
//!
//! With the `parallel` feature (default) batches run on a rayon pool capped
//! at `jobs` threads. Without it every batch runs in order on the caller's
//! thread. Results always come back in input order.

/// How a batch of independent items is processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// `jobs == 0` means one thread per available core.
    Parallel {
        jobs: usize,
    },
}

impl Default for Execution {
    fn default() -> Self {
        Execution::Parallel { jobs: 0 }
    }
}

impl Execution {
    /// `Some(1)` forces sequential execution.
    pub fn from_jobs(jobs: Option<usize>) -> Self {
        match jobs {
            Some(1) => Execution::Sequential,
            Some(n) => Execution::Parallel { jobs: n },
            None => Execution::default(),
        }
    }

    pub fn is_parallel(&self) -> bool {
        cfg!(feature = "parallel") && matches!(self, Execution::Parallel { .. })
    }

    /// Applies `f` to every item, preserving order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel { jobs } => parallel::map(*jobs, items, f),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Applies `f` to `0..n`, preserving order.
    pub fn map_range<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        let indices: Vec<usize> = (0..n).collect();
        self.map(&indices, |&i| f(i))
    }
}

#[cfg(feature = "parallel")]
mod parallel {
    use rayon::prelude::*;

    pub(super) fn map<T, R, F>(jobs: usize, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        if jobs == 0 {
            return items.par_iter().map(f).collect();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(f).collect()),
            Err(e) => {
                tracing::warn!("thread pool unavailable ({e}); running sequentially");
                items.iter().map(f).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let items: Vec<u64> = (0..1000).collect();
        let expected: Vec<u64> = items.iter().map(|x| x * x).collect();
        for exec in [
            Execution::Sequential,
            Execution::Parallel { jobs: 0 },
            Execution::Parallel { jobs: 3 },
        ] {
            assert_eq!(exec.map(&items, |x| x * x), expected);
        }
        assert_eq!(
            Execution::Sequential.map_range(4, |i| i + 1),
            vec![1, 2, 3, 4]
        );
    }

    #[test]
    fn jobs_mapping() {
        assert_eq!(Execution::from_jobs(Some(1)), Execution::Sequential);
        assert_eq!(
            Execution::from_jobs(Some(4)),
            Execution::Parallel { jobs: 4 }
        );
        assert_eq!(Execution::from_jobs(None), Execution::Parallel { jobs: 0 });
    }
}
