use crate::error::{Error, Result};

/// Runs `f` inside a rayon pool with `jobs` threads (`0`: the global pool).
pub(crate) fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    if jobs == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(pool.install(f))
}
