//! Data-parallel map over independent work items.
//!
//! With the `parallel` feature (the default) [`par_map`] fans out over a rayon
//! pool; without it the call degrades to a plain sequential map. Output order
//! matches input order either way, so results are deterministic regardless of
//! scheduling. [`seq_map`] is always sequential and exists so benches can compare
//! the two paths in one build.

/// Sequential reference path.
pub fn seq_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Map `f` over `items`, using up to `jobs` worker threads when the `parallel`
/// feature is enabled. `jobs = None` uses the rayon default; `jobs = Some(1)`
/// and the non-parallel build are exactly sequential.
#[cfg(feature = "parallel")]
pub fn par_map<T, U, F>(items: &[T], jobs: Option<usize>, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    match jobs {
        Some(1) => seq_map(items, f),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("rayon pool");
            pool.install(|| items.par_iter().map(f).collect())
        }
        None => items.par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T, U, F>(items: &[T], _jobs: Option<usize>, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    seq_map(items, f)
}
