//! 2-D convolution kernels (cross-correlation convention, zero padding).
//!
//! The forward kernel computes, for every output element,
//!
//! ```text
//! out[n, co, oh, ow] = bias[co]
//!     + sum over (ci, kh, kw) of
//!       in[n, ci, oh*stride - pad + kh, ow*stride - pad + kw] * w[co, ci, kh, kw]
//! ```
//!
//! with out-of-bounds input reads contributing zero. The kernel is *not*
//! flipped. Backward passes are written in gather form — every output
//! element of the gradient is an independent sum in a fixed order — which
//! keeps them race-free under data parallelism and bitwise reproducible.

use crate::element::Element;
use crate::error::{Error, Result};
use crate::shape::Shape;

use super::{for_each_plane, for_each_plane_seq};

/// Validated geometry of one convolution call.
#[derive(Clone, Copy, Debug)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// Checks input/weight/bias extents and derives the output extent
    /// `floor((dim + 2*padding - k) / stride) + 1`.
    pub fn resolve(
        input: Shape,
        weight: Shape,
        bias_len: usize,
        stride: usize,
        padding: usize,
    ) -> Result<ConvGeom> {
        let k = weight.h;
        if weight.h != weight.w || !(k == 1 || k == 3) {
            return Err(Error::shape(format!(
                "conv2d kernel must be square 1x1 or 3x3, got {}x{}",
                weight.h, weight.w
            )));
        }
        if weight.c != input.c {
            return Err(Error::shape(format!(
                "conv2d weight expects {} input channels, input {} has {}",
                weight.c, input, input.c
            )));
        }
        if bias_len != weight.n {
            return Err(Error::shape(format!(
                "conv2d bias has {} entries for {} output channels",
                bias_len, weight.n
            )));
        }
        if stride == 0 {
            return Err(Error::shape("conv2d stride must be at least 1".to_string()));
        }
        let padded_h = input.h + 2 * padding;
        let padded_w = input.w + 2 * padding;
        if padded_h < k || padded_w < k {
            return Err(Error::shape(format!(
                "conv2d input {input} too small for {k}x{k} kernel with padding {padding}"
            )));
        }
        Ok(ConvGeom {
            n: input.n,
            cin: input.c,
            h: input.h,
            w: input.w,
            cout: weight.n,
            k,
            stride,
            padding,
            oh: (padded_h - k) / stride + 1,
            ow: (padded_w - k) / stride + 1,
        })
    }

    pub fn out_shape(&self) -> Shape {
        Shape::new(self.n, self.cout, self.oh, self.ow)
    }
}

/// One output plane `(n, co)`. Summation order per element: ci, then kh,
/// then kw, starting from the bias — keep in sync with the backward
/// kernels and the naive reference used in tests.
fn forward_plane<E: Element>(
    g: &ConvGeom,
    input: &[E],
    weight: &[E],
    bias: E,
    n: usize,
    co: usize,
    plane: &mut [E],
) {
    let pad = g.padding as isize;
    for oh in 0..g.oh {
        let ih0 = (oh * g.stride) as isize - pad;
        for ow in 0..g.ow {
            let iw0 = (ow * g.stride) as isize - pad;
            let mut acc = bias;
            for ci in 0..g.cin {
                let in_base = (n * g.cin + ci) * g.h * g.w;
                let w_base = (co * g.cin + ci) * g.k * g.k;
                for kh in 0..g.k {
                    let ih = ih0 + kh as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let row = in_base + ih as usize * g.w;
                    let wrow = w_base + kh * g.k;
                    for kw in 0..g.k {
                        let iw = iw0 + kw as isize;
                        if iw < 0 || iw >= g.w as isize {
                            continue;
                        }
                        acc = acc + input[row + iw as usize] * weight[wrow + kw];
                    }
                }
            }
            plane[oh * g.ow + ow] = acc;
        }
    }
}

pub fn forward_seq<E: Element>(g: &ConvGeom, input: &[E], weight: &[E], bias: &[E]) -> Vec<E> {
    let mut out = vec![E::zero(); g.n * g.cout * g.oh * g.ow];
    for_each_plane_seq(&mut out, g.oh * g.ow, |i, plane| {
        let (n, co) = (i / g.cout, i % g.cout);
        forward_plane(g, input, weight, bias[co], n, co, plane);
    });
    out
}

#[cfg(feature = "parallel")]
pub fn forward_par<E: Element>(g: &ConvGeom, input: &[E], weight: &[E], bias: &[E]) -> Vec<E> {
    let mut out = vec![E::zero(); g.n * g.cout * g.oh * g.ow];
    super::for_each_plane_par(&mut out, g.oh * g.ow, |i, plane| {
        let (n, co) = (i / g.cout, i % g.cout);
        forward_plane(g, input, weight, bias[co], n, co, plane);
    });
    out
}

pub fn forward<E: Element>(g: &ConvGeom, input: &[E], weight: &[E], bias: &[E]) -> Vec<E> {
    let mut out = vec![E::zero(); g.n * g.cout * g.oh * g.ow];
    for_each_plane(&mut out, g.oh * g.ow, |i, plane| {
        let (n, co) = (i / g.cout, i % g.cout);
        forward_plane(g, input, weight, bias[co], n, co, plane);
    });
    out
}

/// One input-gradient plane `(n, ci)`. For each input element the valid
/// output positions are recovered from `oh*stride - pad + kh = ih`.
fn backward_input_plane<E: Element>(
    g: &ConvGeom,
    gout: &[E],
    weight: &[E],
    n: usize,
    ci: usize,
    plane: &mut [E],
) {
    let pad = g.padding as isize;
    let stride = g.stride as isize;
    for ih in 0..g.h {
        for iw in 0..g.w {
            let mut acc = E::zero();
            for kh in 0..g.k {
                let th = ih as isize + pad - kh as isize;
                if th < 0 || th % stride != 0 {
                    continue;
                }
                let oh = (th / stride) as usize;
                if oh >= g.oh {
                    continue;
                }
                for kw in 0..g.k {
                    let tw = iw as isize + pad - kw as isize;
                    if tw < 0 || tw % stride != 0 {
                        continue;
                    }
                    let ow = (tw / stride) as usize;
                    if ow >= g.ow {
                        continue;
                    }
                    for co in 0..g.cout {
                        let go = gout[((n * g.cout + co) * g.oh + oh) * g.ow + ow];
                        let wv = weight[((co * g.cin + ci) * g.k + kh) * g.k + kw];
                        acc = acc + go * wv;
                    }
                }
            }
            plane[ih * g.w + iw] = acc;
        }
    }
}

pub fn backward_input_seq<E: Element>(g: &ConvGeom, gout: &[E], weight: &[E]) -> Vec<E> {
    let mut din = vec![E::zero(); g.n * g.cin * g.h * g.w];
    for_each_plane_seq(&mut din, g.h * g.w, |i, plane| {
        let (n, ci) = (i / g.cin, i % g.cin);
        backward_input_plane(g, gout, weight, n, ci, plane);
    });
    din
}

#[cfg(feature = "parallel")]
pub fn backward_input_par<E: Element>(g: &ConvGeom, gout: &[E], weight: &[E]) -> Vec<E> {
    let mut din = vec![E::zero(); g.n * g.cin * g.h * g.w];
    super::for_each_plane_par(&mut din, g.h * g.w, |i, plane| {
        let (n, ci) = (i / g.cin, i % g.cin);
        backward_input_plane(g, gout, weight, n, ci, plane);
    });
    din
}

pub fn backward_input<E: Element>(g: &ConvGeom, gout: &[E], weight: &[E]) -> Vec<E> {
    let mut din = vec![E::zero(); g.n * g.cin * g.h * g.w];
    for_each_plane(&mut din, g.h * g.w, |i, plane| {
        let (n, ci) = (i / g.cin, i % g.cin);
        backward_input_plane(g, gout, weight, n, ci, plane);
    });
    din
}

/// Weight-gradient block for one output channel: `cin * k * k` values,
/// each summed over (n, oh, ow) in fixed order.
fn backward_weight_block<E: Element>(
    g: &ConvGeom,
    input: &[E],
    gout: &[E],
    co: usize,
    block: &mut [E],
) {
    let pad = g.padding as isize;
    for ci in 0..g.cin {
        for kh in 0..g.k {
            for kw in 0..g.k {
                let mut acc = E::zero();
                for n in 0..g.n {
                    let go_base = (n * g.cout + co) * g.oh * g.ow;
                    let in_base = (n * g.cin + ci) * g.h * g.w;
                    for oh in 0..g.oh {
                        let ih = (oh * g.stride) as isize - pad + kh as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let row = in_base + ih as usize * g.w;
                        let go_row = go_base + oh * g.ow;
                        for ow in 0..g.ow {
                            let iw = (ow * g.stride) as isize - pad + kw as isize;
                            if iw < 0 || iw >= g.w as isize {
                                continue;
                            }
                            acc = acc + gout[go_row + ow] * input[row + iw as usize];
                        }
                    }
                }
                block[(ci * g.k + kh) * g.k + kw] = acc;
            }
        }
    }
}

pub fn backward_weight_seq<E: Element>(g: &ConvGeom, input: &[E], gout: &[E]) -> Vec<E> {
    let mut dw = vec![E::zero(); g.cout * g.cin * g.k * g.k];
    for_each_plane_seq(&mut dw, g.cin * g.k * g.k, |co, block| {
        backward_weight_block(g, input, gout, co, block);
    });
    dw
}

#[cfg(feature = "parallel")]
pub fn backward_weight_par<E: Element>(g: &ConvGeom, input: &[E], gout: &[E]) -> Vec<E> {
    let mut dw = vec![E::zero(); g.cout * g.cin * g.k * g.k];
    super::for_each_plane_par(&mut dw, g.cin * g.k * g.k, |co, block| {
        backward_weight_block(g, input, gout, co, block);
    });
    dw
}

pub fn backward_weight<E: Element>(g: &ConvGeom, input: &[E], gout: &[E]) -> Vec<E> {
    let mut dw = vec![E::zero(); g.cout * g.cin * g.k * g.k];
    for_each_plane(&mut dw, g.cin * g.k * g.k, |co, block| {
        backward_weight_block(g, input, gout, co, block);
    });
    dw
}

/// Bias gradient: per output channel, the sum of the upstream gradient
/// over all batch items and spatial positions, in index order.
pub fn backward_bias<E: Element>(g: &ConvGeom, gout: &[E]) -> Vec<E> {
    let mut db = vec![E::zero(); g.cout];
    for n in 0..g.n {
        for co in 0..g.cout {
            let base = (n * g.cout + co) * g.oh * g.ow;
            let mut acc = db[co];
            for i in 0..g.oh * g.ow {
                acc = acc + gout[base + i];
            }
            db[co] = acc;
        }
    }
    db
}
