//! Forward and backward compute kernels on flat slices.
//!
//! Kernels come in `_seq` and (with the `parallel` feature) `_par`
//! flavors plus an unsuffixed dispatcher. Parallelism is only ever
//! applied across disjoint output regions whose per-element arithmetic
//! is byte-for-byte the code the sequential path runs, so both flavors
//! produce bitwise-identical results and the dispatcher may pick either
//! without affecting reproducibility.

pub mod conv;
pub mod elementwise;
pub mod spatial;

/// Outputs smaller than this stay sequential; forking the thread pool
/// for a few thousand elements costs more than it saves.
#[cfg(feature = "parallel")]
pub(crate) const PAR_MIN_ELEMS: usize = 1 << 14;

/// Runs `f(plane_index, plane)` over consecutive `plane_len` chunks of
/// `out`, in parallel when the `parallel` feature is on and the work is
/// large enough.
pub(crate) fn for_each_plane<E: Send, F>(out: &mut [E], plane_len: usize, f: F)
where
    F: Fn(usize, &mut [E]) + Sync,
{
    debug_assert!(plane_len > 0 && out.len() % plane_len == 0);
    #[cfg(feature = "parallel")]
    {
        if out.len() >= PAR_MIN_ELEMS && out.len() > plane_len {
            use rayon::prelude::*;
            out.par_chunks_mut(plane_len)
                .enumerate()
                .for_each(|(i, plane)| f(i, plane));
            return;
        }
    }
    for (i, plane) in out.chunks_mut(plane_len).enumerate() {
        f(i, plane);
    }
}

/// Sequential reference version of [`for_each_plane`]; used by the
/// `_seq` kernel entry points and the benchmark baselines.
pub(crate) fn for_each_plane_seq<E, F>(out: &mut [E], plane_len: usize, f: F)
where
    F: Fn(usize, &mut [E]),
{
    debug_assert!(plane_len > 0 && out.len() % plane_len == 0);
    for (i, plane) in out.chunks_mut(plane_len).enumerate() {
        f(i, plane);
    }
}

/// Always-parallel version of [`for_each_plane`]; benchmark counterpart.
#[cfg(feature = "parallel")]
pub(crate) fn for_each_plane_par<E: Send, F>(out: &mut [E], plane_len: usize, f: F)
where
    F: Fn(usize, &mut [E]) + Sync,
{
    debug_assert!(plane_len > 0 && out.len() % plane_len == 0);
    use rayon::prelude::*;
    out.par_chunks_mut(plane_len)
        .enumerate()
        .for_each(|(i, plane)| f(i, plane));
}
