//! Index-ordered maps, parallel when the `parallel` feature is enabled.

use alloc::vec::Vec;

/// Evaluates `f(scratch, i)` for `i in 0..n` and returns the results in index order.
/// Each worker owns a scratch value built by `init`.
#[cfg(feature = "parallel")]
pub(crate) fn map_scratch<S, T, I, F>(n: usize, init: I, f: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map_init(init, |s, i| f(s, i)).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_scratch<S, T, I, F>(n: usize, init: I, f: F) -> Vec<T>
where
    I: Fn() -> S,
    F: Fn(&mut S, usize) -> T,
{
    let mut s = init();
    (0..n).map(|i| f(&mut s, i)).collect()
}

pub(crate) fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    map_scratch(n, || (), |_, i| f(i))
}
