//! Data-parallel helpers sized by the `SCRNET_THREADS` environment variable.

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "SCRNET_THREADS";

/// Worker count from `SCRNET_THREADS`; unset or 0 means single-threaded.
pub fn worker_threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if v.trim().is_empty() => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) => Ok(n.max(1)),
            _ => Err(Error::InvalidParameter(format!(
                "{THREADS_ENV} must be a non-negative integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(1),
    }
}

/// Maps `f(index, item)` over `items`, keeping order. Results do not depend
/// on the worker count.
pub fn map<I, O, F>(items: &[I], f: F) -> Result<Vec<O>>
where
    I: Sync,
    O: Send,
    F: Fn(usize, &I) -> Result<O> + Sync + Send,
{
    let threads = worker_threads()?;
    if threads <= 1 || items.len() <= 1 {
        return items.iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start {threads} workers: {e}")))?;
    pool.install(|| items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_order() {
        let v: Vec<u32> = (0..50).collect();
        let out = map(&v, |i, x| Ok(i as u32 * 1000 + x)).unwrap();
        assert_eq!(out, (0..50).map(|x| x * 1001).collect::<Vec<_>>());
    }
}
