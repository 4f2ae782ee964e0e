//! Independent-cell execution for sweeps and seed ensembles.
//!
//! With the `parallel` feature (default) cells run on the rayon pool;
//! without it they run in order on the calling thread. Results come back
//! in input order either way, so reports do not depend on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `cells`, in parallel when the feature is enabled.
pub fn map_cells<T, R, F>(cells: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        cells.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_sequential(cells, f)
    }
}

/// Always sequential.
pub fn map_sequential<T, R, F>(cells: &[T], f: F) -> Vec<R>
where
    F: Fn(&T) -> R,
{
    cells.iter().map(f).collect()
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
