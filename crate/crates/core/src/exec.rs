//! Data-parallel execution helpers.
//!
//! With the `parallel` feature (default) corpus-level work is spread over a
//! rayon pool; without it every helper runs sequentially. Callers can also
//! force the sequential path at runtime with [`Parallelism::Sequential`].

/// How a corpus-level loop is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Parallelism {
    Sequential,
    /// Uses the ambient rayon pool; identical to `Sequential` when the
    /// crate is built without the `parallel` feature.
    #[default]
    Rayon,
}

impl Parallelism {
    /// Maps `f` over `items`, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Parallelism::Sequential => items.iter().map(f).collect(),
            Parallelism::Rayon => par_map(items, f),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Runs `op` with at most `jobs` worker threads. `None` keeps the global
/// pool.
#[cfg(feature = "parallel")]
pub fn with_jobs<R: Send>(jobs: Option<usize>, op: impl FnOnce() -> R + Send) -> R {
    match jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(op),
            Err(e) => {
                log::warn!("could not build a {n}-thread pool ({e}); using the global pool");
                op()
            }
        },
        None => op(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_jobs<R: Send>(_jobs: Option<usize>, op: impl FnOnce() -> R + Send) -> R {
    op()
}
