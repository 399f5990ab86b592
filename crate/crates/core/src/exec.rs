//! Execution policy for the embarrassingly parallel maps in the crate.
//!
//! With the `parallel` feature (on by default) [`Execution::Parallel`] runs on
//! the rayon pool; without it every policy runs sequentially, producing the
//! same results in the same order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "GKDV_LAB_THREADS";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Order-preserving map over a slice.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter().map(f).collect(),
            _ => items.iter().map(f).collect(),
        }
    }

    /// Order-preserving map over `0..n`.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
            _ => (0..n).map(f).collect(),
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Worker count after applying the `GKDV_LAB_THREADS` cap.
pub fn capped_workers(requested: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v > 0);
    let w = requested.max(1);
    cap.map_or(w, |c| w.min(c))
}

/// Runs `f` on a dedicated pool of `workers` threads (sequentially when the
/// `parallel` feature is off or `workers == 1`).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce(Execution) -> R + Send) -> R {
    let workers = capped_workers(workers);
    #[cfg(feature = "parallel")]
    if workers > 1 {
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            return pool.install(|| f(Execution::Parallel));
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = workers;
    f(Execution::Sequential)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policies_agree() {
        let v: Vec<u64> = (0..1000).collect();
        let a = Execution::Sequential.map(&v, |x| x * x);
        let b = Execution::Parallel.map(&v, |x| x * x);
        assert_eq!(a, b);
        assert_eq!(Execution::Parallel.map_range(10, |i| i + 1)[9], 10);
    }

    #[test]
    fn worker_pool_runs() {
        let s: u64 = with_workers(3, |ex| ex.map_range(100, |i| i as u64).iter().sum());
        assert_eq!(s, 4950);
    }
}
