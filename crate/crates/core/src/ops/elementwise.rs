//! Pointwise kernels: unary/binary maps and full reductions.

use crate::element::Element;

#[cfg(feature = "parallel")]
use super::PAR_MIN_ELEMS;

/// `out[i] = f(a[i])`, sequential.
pub fn unary_seq<E: Element>(a: &[E], f: impl Fn(E) -> E) -> Vec<E> {
    a.iter().map(|&x| f(x)).collect()
}

/// `out[i] = f(a[i])`, parallel over fixed-size chunks.
#[cfg(feature = "parallel")]
pub fn unary_par<E: Element>(a: &[E], f: impl Fn(E) -> E + Sync) -> Vec<E> {
    use rayon::prelude::*;
    let mut out = vec![E::zero(); a.len()];
    out.par_chunks_mut(PAR_MIN_ELEMS)
        .zip(a.par_chunks(PAR_MIN_ELEMS))
        .for_each(|(dst, src)| {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = f(s);
            }
        });
    out
}

/// `out[i] = f(a[i])`; picks the parallel path for large inputs.
pub fn unary<E: Element>(a: &[E], f: impl Fn(E) -> E + Sync) -> Vec<E> {
    #[cfg(feature = "parallel")]
    {
        if a.len() >= PAR_MIN_ELEMS * 2 {
            return unary_par(a, f);
        }
    }
    unary_seq(a, f)
}

/// `out[i] = f(a[i], b[i])`, sequential.
pub fn binary_seq<E: Element>(a: &[E], b: &[E], f: impl Fn(E, E) -> E) -> Vec<E> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// `out[i] = f(a[i], b[i])`, parallel over fixed-size chunks.
#[cfg(feature = "parallel")]
pub fn binary_par<E: Element>(a: &[E], b: &[E], f: impl Fn(E, E) -> E + Sync) -> Vec<E> {
    use rayon::prelude::*;
    debug_assert_eq!(a.len(), b.len());
    let mut out = vec![E::zero(); a.len()];
    out.par_chunks_mut(PAR_MIN_ELEMS)
        .zip(a.par_chunks(PAR_MIN_ELEMS).zip(b.par_chunks(PAR_MIN_ELEMS)))
        .for_each(|(dst, (sa, sb))| {
            for ((d, &x), &y) in dst.iter_mut().zip(sa).zip(sb) {
                *d = f(x, y);
            }
        });
    out
}

/// `out[i] = f(a[i], b[i])`; picks the parallel path for large inputs.
pub fn binary<E: Element>(a: &[E], b: &[E], f: impl Fn(E, E) -> E + Sync) -> Vec<E> {
    #[cfg(feature = "parallel")]
    {
        if a.len() >= PAR_MIN_ELEMS * 2 {
            return binary_par(a, b, f);
        }
    }
    binary_seq(a, b, f)
}

/// Adds `src` into `dst` elementwise.
pub fn axpy_into<E: Element>(dst: &mut [E], src: &[E]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Sum of all elements in index order. Reductions stay sequential so the
/// accumulation order never depends on the thread count.
pub fn sum_all<E: Element>(a: &[E]) -> E {
    let mut acc = E::zero();
    for &x in a {
        acc = acc + x;
    }
    acc
}

/// Numerically tame logistic function; large negative inputs must not
/// overflow `exp`.
pub fn sigmoid<E: Element>(x: E) -> E {
    if x >= E::zero() {
        E::one() / (E::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_is_index_ordered() {
        let v: Vec<f32> = (0..100).map(|i| i as f32 * 0.1).collect();
        let mut expect = 0.0f32;
        for &x in &v {
            expect += x;
        }
        assert_eq!(sum_all(&v).to_bits(), expect.to_bits());
    }

    #[test]
    fn sigmoid_extremes_are_finite() {
        assert_eq!(sigmoid(-1.0e4f64), 0.0);
        assert_eq!(sigmoid(1.0e4f64), 1.0);
        assert!((sigmoid(0.0f64) - 0.5).abs() < 1e-15);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_maps_match_sequential_bitwise() {
        let a: Vec<f32> = (0..100_000).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..100_000).map(|i| (i as f32 * 0.11).cos()).collect();
        let s = unary_seq(&a, |x| x.tanh());
        let p = unary_par(&a, |x| x.tanh());
        assert!(s.iter().zip(&p).all(|(x, y)| x.to_bits() == y.to_bits()));
        let s = binary_seq(&a, &b, |x, y| x * y + y);
        let p = binary_par(&a, &b, |x, y| x * y + y);
        assert!(s.iter().zip(&p).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
