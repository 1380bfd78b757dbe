//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records one forward computation (define-by-run) and is
//! rebuilt for every pass, which keeps memory proportional to a single
//! graph. Nodes are appended in execution order, so inputs always precede
//! the operations consuming them and one reverse sweep visits every node
//! exactly once.
//!
//! An operation is recorded only when at least one of its inputs is
//! *tracked* — either a tensor flagged `requires_grad` (a leaf) or the
//! output of an earlier node on the same tape. Purely constant
//! computation flows through the same ops with zero recording overhead.
//!
//! [`Tape::backward`] seeds the scalar loss with gradient one, sweeps the
//! nodes in reverse, and delivers gradients into every registered leaf
//! additively: running backward on `L1` and then on `L2` leaves the same
//! leaf gradients as a single backward on `L1 + L2`. Leaves that are
//! registered but receive no gradient path get an all-zeros gradient.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::element::Element;
use crate::error::{Error, Result};
use crate::ops::conv::{self, ConvGeom};
use crate::ops::elementwise::{self, axpy_into};
use crate::ops::spatial::{self, BroadcastKind};
use crate::shape::Shape;
use crate::tensor::Tensor;

static NEXT_TAPE_TOKEN: AtomicU64 = AtomicU64::new(1);

/// Backward rule of one recorded operation. `None` input slots mean the
/// corresponding input was untracked; no gradient flows there.
pub(crate) enum Rule<E: Element> {
    Leaf,
    Add {
        a: Option<usize>,
        b: Option<usize>,
    },
    Sub {
        a: Option<usize>,
        b: Option<usize>,
    },
    Mul {
        a: Option<usize>,
        b: Option<usize>,
        a_val: Tensor<E>,
        b_val: Tensor<E>,
    },
    ScalarMul {
        a: Option<usize>,
        k: E,
    },
    Abs {
        a: Option<usize>,
        input: Tensor<E>,
    },
    Tanh {
        a: Option<usize>,
        output: Tensor<E>,
    },
    Sigmoid {
        a: Option<usize>,
        output: Tensor<E>,
    },
    Relu {
        a: Option<usize>,
        input: Tensor<E>,
    },
    MeanAll {
        a: Option<usize>,
        len: usize,
    },
    GlobalAvgPool {
        a: Option<usize>,
        in_shape: Shape,
    },
    BroadcastMulAdd {
        x: Option<usize>,
        alpha: Option<usize>,
        beta: Option<usize>,
        x_val: Tensor<E>,
        alpha_val: Tensor<E>,
        kind: BroadcastKind,
        x_shape: Shape,
    },
    Conv2d {
        input: Option<usize>,
        weight: Option<usize>,
        bias: Option<usize>,
        input_val: Tensor<E>,
        weight_val: Tensor<E>,
        geom: ConvGeom,
    },
    PixelShuffle {
        a: Option<usize>,
        in_shape: Shape,
        r: usize,
    },
    ConcatChannels {
        a: Option<usize>,
        b: Option<usize>,
        a_shape: Shape,
        b_shape: Shape,
    },
}

struct Node<E: Element> {
    rule: Rule<E>,
    out_numel: usize,
}

struct TapeInner<E: Element> {
    nodes: Vec<Node<E>>,
    /// Leaf handles for gradient delivery, by node id.
    leaves: Vec<(usize, Tensor<E>)>,
}

/// Recording of one forward computation.
pub struct Tape<E: Element> {
    inner: RefCell<TapeInner<E>>,
    token: u64,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Tape<E> {
        Tape {
            inner: RefCell::new(TapeInner {
                nodes: Vec::new(),
                leaves: Vec::new(),
            }),
            token: NEXT_TAPE_TOKEN.fetch_add(1, Ordering::Relaxed),
        }
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node id of `t` on this tape, registering it as a leaf first if it
    /// requires gradients and has not been seen yet. `None` for untracked
    /// constants.
    fn track(&self, t: &Tensor<E>) -> Option<usize> {
        if let Some(id) = t.node_on(self.token) {
            return Some(id);
        }
        if !t.requires_grad() {
            return None;
        }
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            rule: Rule::Leaf,
            out_numel: t.numel(),
        });
        inner.leaves.push((id, t.clone()));
        drop(inner);
        t.set_node(self.token, id);
        Some(id)
    }

    /// Registers a `requires_grad` tensor as a leaf even if no operation
    /// consumes it, so backward delivers it an all-zeros gradient.
    pub fn watch(&self, t: &Tensor<E>) {
        self.track(t);
    }

    /// Records `rule` as the producer of `out` if any input was tracked.
    fn record(&self, rule: Rule<E>, out: &Tensor<E>) {
        let mut inner = self.inner.borrow_mut();
        let id = inner.nodes.len();
        inner.nodes.push(Node {
            rule,
            out_numel: out.numel(),
        });
        drop(inner);
        out.set_node(self.token, id);
    }

    #[cfg(test)]
    pub(crate) fn record_for_test(&self, rule: Rule<E>, out: &Tensor<E>) {
        self.record(rule, out);
    }

    #[cfg(test)]
    pub(crate) fn node_id_for_test(&self, t: &Tensor<E>) -> Option<usize> {
        t.node_on(self.token)
    }

    fn check_same_shape(a: &Tensor<E>, b: &Tensor<E>, op: &str) -> Result<Shape> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa != sb {
            return Err(Error::shape(format!(
                "{op} needs matching shapes, got {sa} and {sb}"
            )));
        }
        Ok(sa)
    }

    /// Elementwise sum.
    pub fn add(&self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        let shape = Self::check_same_shape(a, b, "add")?;
        let data = elementwise::binary(&a.data(), &b.data(), |x, y| x + y);
        let out = Tensor::from_parts(shape, data);
        let (ia, ib) = (self.track(a), self.track(b));
        if ia.is_some() || ib.is_some() {
            self.record(Rule::Add { a: ia, b: ib }, &out);
        }
        Ok(out)
    }

    /// Elementwise difference `a - b`.
    pub fn sub(&self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        let shape = Self::check_same_shape(a, b, "sub")?;
        let data = elementwise::binary(&a.data(), &b.data(), |x, y| x - y);
        let out = Tensor::from_parts(shape, data);
        let (ia, ib) = (self.track(a), self.track(b));
        if ia.is_some() || ib.is_some() {
            self.record(Rule::Sub { a: ia, b: ib }, &out);
        }
        Ok(out)
    }

    /// Elementwise product.
    pub fn mul(&self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        let shape = Self::check_same_shape(a, b, "mul")?;
        let data = elementwise::binary(&a.data(), &b.data(), |x, y| x * y);
        let out = Tensor::from_parts(shape, data);
        let (ia, ib) = (self.track(a), self.track(b));
        if ia.is_some() || ib.is_some() {
            self.record(
                Rule::Mul {
                    a: ia,
                    b: ib,
                    a_val: a.clone(),
                    b_val: b.clone(),
                },
                &out,
            );
        }
        Ok(out)
    }

    /// Multiplies every element by the scalar `k`.
    pub fn scalar_mul(&self, a: &Tensor<E>, k: E) -> Result<Tensor<E>> {
        let data = elementwise::unary(&a.data(), |x| x * k);
        let out = Tensor::from_parts(a.shape(), data);
        if let Some(ia) = self.track(a) {
            self.record(Rule::ScalarMul { a: Some(ia), k }, &out);
        }
        Ok(out)
    }

    /// Elementwise absolute value. The subgradient at zero is taken as 0.
    pub fn abs(&self, a: &Tensor<E>) -> Result<Tensor<E>> {
        let data = elementwise::unary(&a.data(), |x| x.abs());
        let out = Tensor::from_parts(a.shape(), data);
        if let Some(ia) = self.track(a) {
            self.record(
                Rule::Abs {
                    a: Some(ia),
                    input: a.clone(),
                },
                &out,
            );
        }
        Ok(out)
    }

    /// Elementwise hyperbolic tangent.
    pub fn tanh(&self, a: &Tensor<E>) -> Result<Tensor<E>> {
        let data = elementwise::unary(&a.data(), |x| x.tanh());
        let out = Tensor::from_parts(a.shape(), data);
        if let Some(ia) = self.track(a) {
            self.record(
                Rule::Tanh {
                    a: Some(ia),
                    output: out.clone(),
                },
                &out,
            );
        }
        Ok(out)
    }

    /// Elementwise logistic sigmoid.
    pub fn sigmoid(&self, a: &Tensor<E>) -> Result<Tensor<E>> {
        let data = elementwise::unary(&a.data(), elementwise::sigmoid);
        let out = Tensor::from_parts(a.shape(), data);
        if let Some(ia) = self.track(a) {
            self.record(
                Rule::Sigmoid {
                    a: Some(ia),
                    output: out.clone(),
                },
                &out,
            );
        }
        Ok(out)
    }

    /// Elementwise rectifier `max(x, 0)`. The subgradient at zero is 0.
    pub fn relu(&self, a: &Tensor<E>) -> Result<Tensor<E>> {
        let data = elementwise::unary(&a.data(), |x| if x > E::zero() { x } else { E::zero() });
        let out = Tensor::from_parts(a.shape(), data);
        if let Some(ia) = self.track(a) {
            self.record(
                Rule::Relu {
                    a: Some(ia),
                    input: a.clone(),
                },
                &out,
            );
        }
        Ok(out)
    }

    /// Mean over all elements, as a `(1, 1, 1, 1)` tensor.
    pub fn mean_all(&self, a: &Tensor<E>) -> Result<Tensor<E>> {
        let len = a.numel();
        if len == 0 {
            return Err(Error::degenerate("mean of an empty tensor".to_string()));
        }
        let mean = elementwise::sum_all(&a.data()) / E::from_f64(len as f64);
        let out = Tensor::scalar(mean);
        if let Some(ia) = self.track(a) {
            self.record(Rule::MeanAll { a: Some(ia), len }, &out);
        }
        Ok(out)
    }

    /// Spatial mean per channel: `(N, C, H, W)` to `(N, C, 1, 1)`.
    pub fn global_avg_pool(&self, a: &Tensor<E>) -> Result<Tensor<E>> {
        let s = a.shape();
        let data = spatial::global_avg_pool(&a.data(), s);
        let out = Tensor::from_parts(Shape::new(s.n, s.c, 1, 1), data);
        if let Some(ia) = self.track(a) {
            self.record(
                Rule::GlobalAvgPool {
                    a: Some(ia),
                    in_shape: s,
                },
                &out,
            );
        }
        Ok(out)
    }

    /// Affine feature modulation `alpha (*) x + beta`, with the
    /// coefficient pair broadcast from one of the supported shapes
    /// (same as `x`, `(N,1,H,W)`, or `(N,C,1,1)`).
    pub fn broadcast_mul_add(
        &self,
        x: &Tensor<E>,
        alpha: &Tensor<E>,
        beta: &Tensor<E>,
    ) -> Result<Tensor<E>> {
        let xs = x.shape();
        let cs = Self::check_same_shape(alpha, beta, "broadcast_mul_add coefficients")?;
        let kind = BroadcastKind::classify(xs, cs)?;
        let data = spatial::broadcast_mul_add(&x.data(), xs, &alpha.data(), &beta.data(), kind);
        let out = Tensor::from_parts(xs, data);
        let (ix, ia, ib) = (self.track(x), self.track(alpha), self.track(beta));
        if ix.is_some() || ia.is_some() || ib.is_some() {
            self.record(
                Rule::BroadcastMulAdd {
                    x: ix,
                    alpha: ia,
                    beta: ib,
                    x_val: x.clone(),
                    alpha_val: alpha.clone(),
                    kind,
                    x_shape: xs,
                },
                &out,
            );
        }
        Ok(out)
    }

    /// 2-D convolution (cross-correlation, zero padding). `weight` is
    /// `(Cout, Cin, k, k)` with k in {1, 3}; `bias` holds one value per
    /// output channel (any rank-4 extent with `Cout` elements).
    pub fn conv2d(
        &self,
        input: &Tensor<E>,
        weight: &Tensor<E>,
        bias: &Tensor<E>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<E>> {
        let geom = ConvGeom::resolve(
            input.shape(),
            weight.shape(),
            bias.numel(),
            stride,
            padding,
        )?;
        let data = conv::forward(&geom, &input.data(), &weight.data(), &bias.data());
        let out = Tensor::from_parts(geom.out_shape(), data);
        let (ii, iw, ib) = (self.track(input), self.track(weight), self.track(bias));
        if ii.is_some() || iw.is_some() || ib.is_some() {
            self.record(
                Rule::Conv2d {
                    input: ii,
                    weight: iw,
                    bias: ib,
                    input_val: input.clone(),
                    weight_val: weight.clone(),
                    geom,
                },
                &out,
            );
        }
        Ok(out)
    }

    /// Depth-to-space rearrangement by factor `r`.
    pub fn pixel_shuffle(&self, a: &Tensor<E>, r: usize) -> Result<Tensor<E>> {
        let s = a.shape();
        if r == 0 || s.c % (r * r) != 0 {
            return Err(Error::shape(format!(
                "pixel_shuffle needs channels divisible by r^2 = {}, got {}",
                r * r,
                s
            )));
        }
        let data = spatial::pixel_shuffle(&a.data(), s, r);
        let out = Tensor::from_parts(Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r), data);
        if let Some(ia) = self.track(a) {
            self.record(
                Rule::PixelShuffle {
                    a: Some(ia),
                    in_shape: s,
                    r,
                },
                &out,
            );
        }
        Ok(out)
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&self, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
        let (sa, sb) = (a.shape(), b.shape());
        if sa.n != sb.n || sa.h != sb.h || sa.w != sb.w {
            return Err(Error::shape(format!(
                "concat_channels needs matching batch and spatial extents, got {sa} and {sb}"
            )));
        }
        let data = spatial::concat_channels(&a.data(), sa, &b.data(), sb);
        let out = Tensor::from_parts(Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w), data);
        let (ia, ib) = (self.track(a), self.track(b));
        if ia.is_some() || ib.is_some() {
            self.record(
                Rule::ConcatChannels {
                    a: ia,
                    b: ib,
                    a_shape: sa,
                    b_shape: sb,
                },
                &out,
            );
        }
        Ok(out)
    }

    /// Propagates gradients from the scalar `loss` back to every
    /// registered leaf. Leaf gradients accumulate additively across
    /// backward calls; clear them with [`Tensor::zero_grad`].
    pub fn backward(&self, loss: &Tensor<E>) -> Result<()> {
        let loss_id = loss.node_on(self.token).ok_or_else(|| {
            Error::contract("backward: loss was not produced on this tape".to_string())
        })?;
        if loss.numel() != 1 {
            return Err(Error::contract(format!(
                "backward: loss must be a single element, shape is {}",
                loss.shape()
            )));
        }

        let inner = self.inner.borrow();
        let mut grads: Vec<Option<Vec<E>>> = Vec::new();
        grads.resize_with(inner.nodes.len(), || None);
        grads[loss_id] = Some(vec![E::one()]);
        let mut leaf_grads: Vec<Option<Vec<E>>> = Vec::new();
        leaf_grads.resize_with(inner.nodes.len(), || None);

        // Nodes are in execution order, so a reverse index sweep visits
        // consumers before producers; each node is processed once.
        for id in (0..=loss_id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &inner.nodes[id];
            debug_assert_eq!(g.len(), node.out_numel);
            let mut send = |slot: Option<usize>, contribution: Vec<E>| {
                let Some(target) = slot else { return };
                // Inputs are tracked before their consumer is recorded.
                debug_assert!(target < id);
                match &mut grads[target] {
                    Some(acc) => axpy_into(acc, &contribution),
                    slot_ref @ None => *slot_ref = Some(contribution),
                }
            };
            match &node.rule {
                Rule::Leaf => {
                    leaf_grads[id] = Some(g);
                }
                Rule::Add { a, b } => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Rule::Sub { a, b } => {
                    send(*a, g.clone());
                    send(*b, g.iter().map(|&v| -v).collect());
                }
                Rule::Mul { a, b, a_val, b_val } => {
                    if a.is_some() {
                        let bv = b_val.data();
                        send(*a, g.iter().zip(bv.iter()).map(|(&gv, &v)| gv * v).collect());
                    }
                    if b.is_some() {
                        let av = a_val.data();
                        send(*b, g.iter().zip(av.iter()).map(|(&gv, &v)| gv * v).collect());
                    }
                }
                Rule::ScalarMul { a, k } => {
                    let k = *k;
                    send(*a, g.iter().map(|&v| v * k).collect());
                }
                Rule::Abs { a, input } => {
                    let iv = input.data();
                    send(
                        *a,
                        g.iter()
                            .zip(iv.iter())
                            .map(|(&gv, &x)| {
                                if x > E::zero() {
                                    gv
                                } else if x < E::zero() {
                                    -gv
                                } else {
                                    E::zero()
                                }
                            })
                            .collect(),
                    );
                }
                Rule::Tanh { a, output } => {
                    let ov = output.data();
                    send(
                        *a,
                        g.iter()
                            .zip(ov.iter())
                            .map(|(&gv, &y)| gv * (E::one() - y * y))
                            .collect(),
                    );
                }
                Rule::Sigmoid { a, output } => {
                    let ov = output.data();
                    send(
                        *a,
                        g.iter()
                            .zip(ov.iter())
                            .map(|(&gv, &y)| gv * y * (E::one() - y))
                            .collect(),
                    );
                }
                Rule::Relu { a, input } => {
                    let iv = input.data();
                    send(
                        *a,
                        g.iter()
                            .zip(iv.iter())
                            .map(|(&gv, &x)| if x > E::zero() { gv } else { E::zero() })
                            .collect(),
                    );
                }
                Rule::MeanAll { a, len } => {
                    let share = g[0] / E::from_f64(*len as f64);
                    send(*a, vec![share; *len]);
                }
                Rule::GlobalAvgPool { a, in_shape } => {
                    send(*a, spatial::global_avg_pool_backward(&g, *in_shape));
                }
                Rule::BroadcastMulAdd {
                    x,
                    alpha,
                    beta,
                    x_val,
                    alpha_val,
                    kind,
                    x_shape,
                } => {
                    if x.is_some() {
                        send(
                            *x,
                            spatial::broadcast_mul_add_backward_x(
                                &g,
                                *x_shape,
                                &alpha_val.data(),
                                *kind,
                            ),
                        );
                    }
                    if alpha.is_some() {
                        send(
                            *alpha,
                            spatial::broadcast_mul_add_backward_coeff(
                                &g,
                                *x_shape,
                                Some(&x_val.data()),
                                *kind,
                            ),
                        );
                    }
                    if beta.is_some() {
                        send(
                            *beta,
                            spatial::broadcast_mul_add_backward_coeff(&g, *x_shape, None, *kind),
                        );
                    }
                }
                Rule::Conv2d {
                    input,
                    weight,
                    bias,
                    input_val,
                    weight_val,
                    geom,
                } => {
                    if input.is_some() {
                        send(*input, conv::backward_input(geom, &g, &weight_val.data()));
                    }
                    if weight.is_some() {
                        send(*weight, conv::backward_weight(geom, &input_val.data(), &g));
                    }
                    if bias.is_some() {
                        send(*bias, conv::backward_bias(geom, &g));
                    }
                }
                Rule::PixelShuffle { a, in_shape, r } => {
                    send(*a, spatial::pixel_unshuffle(&g, *in_shape, *r));
                }
                Rule::ConcatChannels {
                    a,
                    b,
                    a_shape,
                    b_shape,
                } => {
                    let (ga, gb) = spatial::split_channels(&g, *a_shape, *b_shape);
                    send(*a, ga);
                    send(*b, gb);
                }
            }
        }

        for (id, handle) in &inner.leaves {
            if !handle.requires_grad() {
                continue;
            }
            match leaf_grads[*id].take() {
                Some(g) => handle.accumulate_grad(&g),
                None => handle.accumulate_grad(&vec![E::zero(); handle.numel()]),
            }
        }
        Ok(())
    }
}
