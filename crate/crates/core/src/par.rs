//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) the helpers fan out over the rayon
//! thread pool; without it, or inside [`sequential`], they run on the calling
//! thread. Results always come back in input order, so outputs are identical
//! in both modes.

use std::cell::Cell;

thread_local! {
    static FORCE_SEQUENTIAL: Cell<bool> = const { Cell::new(false) };
}

/// Runs `f` with every helper in this module pinned to the calling thread.
pub fn sequential<R>(f: impl FnOnce() -> R) -> R {
    let prev = FORCE_SEQUENTIAL.with(|flag| flag.replace(true));
    let out = f();
    FORCE_SEQUENTIAL.with(|flag| flag.set(prev));
    out
}

fn forced_sequential() -> bool {
    FORCE_SEQUENTIAL.with(|flag| flag.get())
}

/// True when helpers called from this thread will actually fan out.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel") && !forced_sequential()
}

/// Runs `f` inside a pool bounded to `jobs` workers. `jobs == 1` runs
/// sequentially; `None` uses the global pool.
pub fn with_jobs<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match jobs {
        None | Some(0) => f(),
        Some(1) => sequential(f),
        #[cfg(feature = "parallel")]
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(err) => {
                log::warn!("cannot build a {n}-thread pool ({err}); using the global pool");
                f()
            }
        },
        #[cfg(not(feature = "parallel"))]
        Some(_) => f(),
    }
}

pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if !forced_sequential() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

/// Like [`map`] but stops at the first error (in input order for the
/// sequential path; some error for the parallel path).
pub fn try_map<T, R, E, F>(items: &[T], f: F) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&T) -> Result<R, E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if !forced_sequential() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}
