//! Row-parallel helpers.
//!
//! With the `parallel` feature enabled these dispatch to rayon; without it
//! they run the same closures sequentially. Both paths visit work items in
//! a fixed partition and return results in input order, so floating-point
//! reductions that follow are bit-identical across the two builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Rows processed per task in chunked reductions.
pub const CHUNK_ROWS: usize = 64;

/// Execution strategy for batched kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Parallel when the crate is built with rayon, sequential otherwise.
    pub fn available() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Apply `f` to every `width`-long row of `input`, writing into the
/// matching row of `output`.
pub fn for_each_row<F>(exec: Exec, input: &[f64], output: &mut [f64], width: usize, f: F)
where
    F: Fn(&[f64], &mut [f64]) + Sync + Send,
{
    debug_assert_eq!(input.len(), output.len());
    if width == 0 {
        return;
    }
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => input
            .par_chunks(width)
            .zip(output.par_chunks_mut(width))
            .for_each(|(x, y)| f(x, y)),
        _ => input
            .chunks(width)
            .zip(output.chunks_mut(width))
            .for_each(|(x, y)| f(x, y)),
    }
}

/// Map `f` over `0..count`, collecting results in index order.
pub fn map_indexed<T, F>(exec: Exec, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Exec::Parallel => (0..count).into_par_iter().map(f).collect(),
        _ => (0..count).map(f).collect(),
    }
}
