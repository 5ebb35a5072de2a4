//! Data-parallel helpers over independent jobs.
//!
//! With the `parallel` feature the jobs run on the rayon pool; without it they
//! run in order on the calling thread. Outputs are always collected in input
//! order, so results do not depend on the feature or the worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::Result;

pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}

pub fn try_map<T, R, F>(items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> Result<R> + Sync + Send,
{
    map(items, f).into_iter().collect()
}

/// Runs `f(0..count)` and collects in index order.
pub fn try_range<R, F>(count: usize, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}

/// Runs `f` inside a pool of `jobs` workers (0 = rayon default). Without the
/// `parallel` feature this just calls `f`.
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if jobs == 0 {
            return f();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let items: Vec<u32> = (0..100).collect();
        let out = map(&items, |i, v| (i as u32) * 1000 + v);
        assert_eq!(out, (0..100).map(|v| v * 1001).collect::<Vec<_>>());
    }

    #[test]
    fn try_range_propagates_errors() {
        let r: Result<Vec<usize>> = try_range(10, |i| {
            if i == 7 {
                Err(crate::error::Error::InvalidArgument("seven".into()))
            } else {
                Ok(i)
            }
        });
        assert!(r.is_err());
    }
}
