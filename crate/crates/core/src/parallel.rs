//! Order-preserving parallel map. Reductions over the results are always
//! done sequentially in index order, so results do not depend on the worker
//! count.

#[cfg(feature = "parallel")]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Caps the global worker pool. Has no effect without the `parallel` feature
/// or when the pool was already initialised.
pub fn set_worker_count(workers: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = workers;
}
