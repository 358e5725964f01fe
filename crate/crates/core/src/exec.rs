//! Execution strategy for independent grid-point work.
//!
//! The grid engine maps a pure function over a list of lattice nodes. With
//! the `parallel` feature (on by default) the map runs on rayon's work
//! stealing pool; without it the same map runs sequentially. Results are
//! returned in input order either way, which is what makes pipeline output
//! independent of the thread count: every downstream reduction consumes the
//! lattice order, never the completion order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, preserving input order in the output.
///
/// With the `parallel` feature the calls run on the rayon pool and `f` must
/// be `Sync`; sequentially compiled builds apply `f` in a plain loop. Callers
/// control the pool size through `rayon::ThreadPoolBuilder` or by running
/// inside an explicitly built pool.
#[cfg(feature = "parallel")]
pub(crate) fn ordered_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    items.into_par_iter().map(f).collect()
}

/// Sequential fallback used when the `parallel` feature is disabled.
#[cfg(not(feature = "parallel"))]
pub(crate) fn ordered_map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    items.into_iter().map(f).collect()
}
