//! Per-item fan-out that runs on the rayon pool when the `parallel` feature
//! is enabled and the caller asks for it, and sequentially otherwise. Both
//! paths visit every item exactly once with the same closure, so results are
//! bit-identical.

pub(crate) fn for_each_indexed<T, F>(items: &mut [T], parallel: bool, f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        items.par_iter_mut().enumerate().for_each(|(i, item)| f(i, item));
        return;
    }
    let _ = parallel;
    items.iter_mut().enumerate().for_each(|(i, item)| f(i, item));
}

pub(crate) fn map_range<R, F>(n: usize, parallel: bool, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

/// Whether the rayon path is compiled in.
pub const fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}
