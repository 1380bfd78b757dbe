//! Layout-moving kernels: pixel shuffle, channel concat, pooling,
//! broadcast modulation, and reflect padding.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::shape::Shape;

use super::for_each_plane;

/// Where a `(alpha, beta)` pair broadcasts against an `(N, C, H, W)` input.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BroadcastKind {
    /// Same extent as the input — one coefficient per element.
    Full,
    /// `(N, 1, H, W)` — one coefficient per pixel, shared across channels.
    PerPixel,
    /// `(N, C, 1, 1)` — one coefficient per channel, shared across pixels.
    PerChannel,
}

impl BroadcastKind {
    /// Classifies how `coeff` broadcasts over `x`, or errors for
    /// unsupported combinations.
    pub fn classify(x: Shape, coeff: Shape) -> Result<BroadcastKind> {
        if coeff == x {
            Ok(BroadcastKind::Full)
        } else if coeff.n == x.n && coeff.c == 1 && coeff.h == x.h && coeff.w == x.w {
            Ok(BroadcastKind::PerPixel)
        } else if coeff.n == x.n && coeff.c == x.c && coeff.h == 1 && coeff.w == 1 {
            Ok(BroadcastKind::PerChannel)
        } else {
            Err(Error::shape(format!(
                "cannot broadcast coefficients {coeff} over input {x}; \
                 supported: same shape, (N,1,H,W), (N,C,1,1)"
            )))
        }
    }
}

/// Pixel shuffle: rearranges `(N, C*r*r, H, W)` to `(N, C, H*r, W*r)` with
/// `out[n, c, h*r + i, w*r + j] = in[n, c*r*r + i*r + j, h, w]`.
pub fn pixel_shuffle<E: Element>(input: &[E], shape: Shape, r: usize) -> Vec<E> {
    debug_assert!(r >= 1 && shape.c % (r * r) == 0);
    let (c_out, oh, ow) = (shape.c / (r * r), shape.h * r, shape.w * r);
    let mut out = vec![E::zero(); input.len()];
    for_each_plane(&mut out, oh * ow, |idx, plane| {
        let (n, c) = (idx / c_out, idx % c_out);
        for ohh in 0..oh {
            let (h, i) = (ohh / r, ohh % r);
            for oww in 0..ow {
                let (w, j) = (oww / r, oww % r);
                let cin = c * r * r + i * r + j;
                plane[ohh * ow + oww] =
                    input[((n * shape.c + cin) * shape.h + h) * shape.w + w];
            }
        }
    });
    out
}

/// Exact inverse of [`pixel_shuffle`] (space-to-depth, same convention):
/// input extent `(N, C, H*r, W*r)`, output `(N, C*r*r, H, W)`. Also the
/// backward pass of pixel shuffle, since a permutation's gradient is its
/// inverse permutation.
pub fn pixel_unshuffle<E: Element>(input: &[E], out_shape: Shape, r: usize) -> Vec<E> {
    debug_assert!(r >= 1 && out_shape.c % (r * r) == 0);
    let (c_up, ih, iw) = (out_shape.c / (r * r), out_shape.h * r, out_shape.w * r);
    let mut out = vec![E::zero(); input.len()];
    for_each_plane(&mut out, out_shape.h * out_shape.w, |idx, plane| {
        let (n, cin) = (idx / out_shape.c, idx % out_shape.c);
        let c = cin / (r * r);
        let i = (cin / r) % r;
        let j = cin % r;
        for h in 0..out_shape.h {
            for w in 0..out_shape.w {
                plane[h * out_shape.w + w] =
                    input[((n * c_up + c) * ih + h * r + i) * iw + w * r + j];
            }
        }
    });
    out
}

/// Concatenates along the channel axis.
pub fn concat_channels<E: Element>(a: &[E], sa: Shape, b: &[E], sb: Shape) -> Vec<E> {
    debug_assert!(sa.n == sb.n && sa.h == sb.h && sa.w == sb.w);
    let plane = sa.h * sa.w;
    let mut out = Vec::with_capacity(a.len() + b.len());
    for n in 0..sa.n {
        out.extend_from_slice(&a[n * sa.c * plane..(n + 1) * sa.c * plane]);
        out.extend_from_slice(&b[n * sb.c * plane..(n + 1) * sb.c * plane]);
    }
    out
}

/// Splits the channel-concat gradient back into its two halves.
pub fn split_channels<E: Element>(g: &[E], sa: Shape, sb: Shape) -> (Vec<E>, Vec<E>) {
    let plane = sa.h * sa.w;
    let mut ga = Vec::with_capacity(sa.numel());
    let mut gb = Vec::with_capacity(sb.numel());
    let stride = (sa.c + sb.c) * plane;
    for n in 0..sa.n {
        let base = n * stride;
        ga.extend_from_slice(&g[base..base + sa.c * plane]);
        gb.extend_from_slice(&g[base + sa.c * plane..base + stride]);
    }
    (ga, gb)
}

/// Global average pool: `(N, C, H, W)` to `(N, C, 1, 1)`, mean over the
/// spatial plane in index order.
pub fn global_avg_pool<E: Element>(input: &[E], shape: Shape) -> Vec<E> {
    let plane = shape.h * shape.w;
    let inv = E::one() / E::from_f64(plane as f64);
    let mut out = vec![E::zero(); shape.n * shape.c];
    for (i, o) in out.iter_mut().enumerate() {
        let base = i * plane;
        let mut acc = E::zero();
        for v in &input[base..base + plane] {
            acc = acc + *v;
        }
        *o = acc * inv;
    }
    out
}

/// Backward of [`global_avg_pool`]: spreads each channel gradient evenly
/// over its spatial plane.
pub fn global_avg_pool_backward<E: Element>(gout: &[E], in_shape: Shape) -> Vec<E> {
    let plane = in_shape.h * in_shape.w;
    let inv = E::one() / E::from_f64(plane as f64);
    let mut din = vec![E::zero(); in_shape.numel()];
    for (i, &g) in gout.iter().enumerate() {
        let v = g * inv;
        for d in &mut din[i * plane..(i + 1) * plane] {
            *d = v;
        }
    }
    din
}

fn coeff_index(kind: BroadcastKind, x: Shape, n: usize, c: usize, h: usize, w: usize) -> usize {
    match kind {
        BroadcastKind::Full => ((n * x.c + c) * x.h + h) * x.w + w,
        BroadcastKind::PerPixel => (n * x.h + h) * x.w + w,
        BroadcastKind::PerChannel => n * x.c + c,
    }
}

/// `out = alpha (*) x + beta` with `alpha`/`beta` broadcast per `kind`.
pub fn broadcast_mul_add<E: Element>(
    x: &[E],
    xs: Shape,
    alpha: &[E],
    beta: &[E],
    kind: BroadcastKind,
) -> Vec<E> {
    let mut out = vec![E::zero(); x.len()];
    let plane = xs.h * xs.w;
    for_each_plane(&mut out, plane, |idx, p| {
        let (n, c) = (idx / xs.c, idx % xs.c);
        match kind {
            BroadcastKind::PerChannel => {
                let a = alpha[n * xs.c + c];
                let b = beta[n * xs.c + c];
                let base = idx * plane;
                for (o, &xv) in p.iter_mut().zip(&x[base..base + plane]) {
                    *o = a * xv + b;
                }
            }
            _ => {
                for h in 0..xs.h {
                    for w in 0..xs.w {
                        let ci = coeff_index(kind, xs, n, c, h, w);
                        let xi = (idx * xs.h + h) * xs.w + w;
                        p[h * xs.w + w] = alpha[ci] * x[xi] + beta[ci];
                    }
                }
            }
        }
    });
    out
}

/// Gradient w.r.t. `x`: upstream times alpha, elementwise under broadcast.
pub fn broadcast_mul_add_backward_x<E: Element>(
    gout: &[E],
    xs: Shape,
    alpha: &[E],
    kind: BroadcastKind,
) -> Vec<E> {
    let mut out = vec![E::zero(); gout.len()];
    let plane = xs.h * xs.w;
    for_each_plane(&mut out, plane, |idx, p| {
        let (n, c) = (idx / xs.c, idx % xs.c);
        for h in 0..xs.h {
            for w in 0..xs.w {
                let ci = coeff_index(kind, xs, n, c, h, w);
                p[h * xs.w + w] = gout[(idx * xs.h + h) * xs.w + w] * alpha[ci];
            }
        }
    });
    out
}

/// Gradient w.r.t. `alpha` (pass `x`) or `beta` (pass all-ones semantics by
/// `x = None`): the upstream gradient times `x`, summed over the axes the
/// coefficient was broadcast across, in index order.
pub fn broadcast_mul_add_backward_coeff<E: Element>(
    gout: &[E],
    xs: Shape,
    x: Option<&[E]>,
    kind: BroadcastKind,
) -> Vec<E> {
    let plane = xs.h * xs.w;
    match kind {
        BroadcastKind::Full => match x {
            Some(xv) => gout.iter().zip(xv).map(|(&g, &v)| g * v).collect(),
            None => gout.to_vec(),
        },
        BroadcastKind::PerPixel => {
            let mut out = vec![E::zero(); xs.n * plane];
            for n in 0..xs.n {
                for c in 0..xs.c {
                    let base = (n * xs.c + c) * plane;
                    let obase = n * plane;
                    for i in 0..plane {
                        let g = match x {
                            Some(xv) => gout[base + i] * xv[base + i],
                            None => gout[base + i],
                        };
                        out[obase + i] = out[obase + i] + g;
                    }
                }
            }
            out
        }
        BroadcastKind::PerChannel => {
            let mut out = vec![E::zero(); xs.n * xs.c];
            for (idx, o) in out.iter_mut().enumerate() {
                let base = idx * plane;
                let mut acc = E::zero();
                for i in 0..plane {
                    acc = acc
                        + match x {
                            Some(xv) => gout[base + i] * xv[base + i],
                            None => gout[base + i],
                        };
                }
                *o = acc;
            }
            out
        }
    }
}

/// Mirror-pads a single `(C, H, W)` plane stack on the right/bottom to
/// `(C, H + pad_h, W + pad_w)`. The edge row/column is not repeated
/// (reflection about the last sample), so `pad` must be < `dim`.
pub fn reflect_pad_bottom_right<E: Element>(
    input: &[E],
    c: usize,
    h: usize,
    w: usize,
    pad_h: usize,
    pad_w: usize,
) -> Result<Vec<E>> {
    if pad_h >= h || pad_w >= w {
        return Err(Error::shape(format!(
            "reflect padding ({pad_h}, {pad_w}) must be smaller than the image ({h}, {w})"
        )));
    }
    let (nh, nw) = (h + pad_h, w + pad_w);
    let mut out = vec![E::zero(); c * nh * nw];
    for ch in 0..c {
        for y in 0..nh {
            let sy = if y < h { y } else { 2 * h - 2 - y };
            for x in 0..nw {
                let sx = if x < w { x } else { 2 * w - 2 - x };
                out[(ch * nh + y) * nw + x] = input[(ch * h + sy) * w + sx];
            }
        }
    }
    Ok(out)
}

/// Crops the top-left `(C, H, W)` region back out of a padded plane stack.
pub fn crop_top_left<E: Element>(
    input: &[E],
    c: usize,
    src_h: usize,
    src_w: usize,
    h: usize,
    w: usize,
) -> Vec<E> {
    debug_assert!(h <= src_h && w <= src_w);
    let mut out = vec![E::zero(); c * h * w];
    for ch in 0..c {
        for y in 0..h {
            let src = (ch * src_h + y) * src_w;
            let dst = (ch * h + y) * w;
            out[dst..dst + w].copy_from_slice(&input[src..src + w]);
        }
    }
    out
}
