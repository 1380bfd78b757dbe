//! The tensor value type.
//!
//! A [`Tensor`] is a cheaply clonable handle to shared storage: layers,
//! the parameter registry, the optimizer and recorded tape nodes all hold
//! clones of the same handle, so an in-place parameter update is seen by
//! everyone. Gradients are delivered into the handle by
//! [`Tape::backward`](crate::tape::Tape::backward) and accumulate
//! additively until [`Tensor::zero_grad`] clears them.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::shape::Shape;

/// Identifies a node on one specific tape. Tapes are single-use, so a
/// stale reference (token mismatch) simply means "not tracked here".
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub(crate) struct NodeRef {
    pub token: u64,
    pub id: usize,
}

struct TensorData<E: Element> {
    shape: Shape,
    data: Vec<E>,
    requires_grad: bool,
    grad: Option<Vec<E>>,
    node: Option<NodeRef>,
}

/// Rank-4 NCHW array of [`Element`]s with optional gradient storage.
pub struct Tensor<E: Element> {
    inner: Rc<RefCell<TensorData<E>>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<E: Element> Tensor<E> {
    /// Wraps `values` (row-major NCHW) in a tensor of extent `shape`.
    pub fn from_data(shape: Shape, values: Vec<E>) -> Result<Tensor<E>> {
        if values.len() != shape.numel() {
            return Err(Error::shape(format!(
                "element count mismatch: shape {shape} holds {} elements, got {}",
                shape.numel(),
                values.len()
            )));
        }
        Ok(Self::from_parts(shape, values))
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<E>) -> Tensor<E> {
        debug_assert_eq!(data.len(), shape.numel());
        Tensor {
            inner: Rc::new(RefCell::new(TensorData {
                shape,
                data,
                requires_grad: false,
                grad: None,
                node: None,
            })),
        }
    }

    pub fn zeros(shape: Shape) -> Tensor<E> {
        Self::from_parts(shape, vec![E::zero(); shape.numel()])
    }

    pub fn full(shape: Shape, value: E) -> Tensor<E> {
        Self::from_parts(shape, vec![value; shape.numel()])
    }

    /// Single-element tensor of extent (1, 1, 1, 1).
    pub fn scalar(value: E) -> Tensor<E> {
        Self::from_parts(Shape::new(1, 1, 1, 1), vec![value])
    }

    pub fn shape(&self) -> Shape {
        self.inner.borrow().shape
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    /// Read-only view of the flat element data.
    pub fn data(&self) -> Ref<'_, [E]> {
        Ref::map(self.inner.borrow(), |d| d.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.inner.borrow().data.clone()
    }

    /// Element at `(n, c, h, w)`.
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> E {
        let d = self.inner.borrow();
        d.data[d.shape.index(n, c, h, w)]
    }

    /// Replaces the stored values. The element count must not change.
    pub fn set_data(&self, values: &[E]) -> Result<()> {
        let mut d = self.inner.borrow_mut();
        if values.len() != d.data.len() {
            return Err(Error::shape(format!(
                "set_data length mismatch: tensor holds {} elements, got {}",
                d.data.len(),
                values.len()
            )));
        }
        d.data.copy_from_slice(values);
        Ok(())
    }

    /// Mutates the stored values in place.
    pub fn map_data_mut<R>(&self, f: impl FnOnce(&mut [E]) -> R) -> R {
        let mut d = self.inner.borrow_mut();
        f(d.data.as_mut_slice())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<E> {
        let d = self.inner.borrow();
        if d.data.len() != 1 {
            return Err(Error::contract(format!(
                "item() needs a single-element tensor, shape is {}",
                d.shape
            )));
        }
        Ok(d.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, requires: bool) {
        self.inner.borrow_mut().requires_grad = requires;
    }

    /// Accumulated gradient, if any backward pass has delivered one.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Adds `g` into the stored gradient (creating it as zeros first).
    pub(crate) fn accumulate_grad(&self, g: &[E]) {
        let mut d = self.inner.borrow_mut();
        debug_assert_eq!(g.len(), d.data.len());
        let len = d.data.len();
        let grad = d.grad.get_or_insert_with(|| vec![E::zero(); len]);
        for (dst, src) in grad.iter_mut().zip(g) {
            *dst = *dst + *src;
        }
    }

    /// Two handles to the same storage?
    pub fn same_storage(&self, other: &Tensor<E>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub(crate) fn node_on(&self, token: u64) -> Option<usize> {
        match self.inner.borrow().node {
            Some(nref) if nref.token == token => Some(nref.id),
            _ => None,
        }
    }

    pub(crate) fn set_node(&self, token: u64, id: usize) {
        self.inner.borrow_mut().node = Some(NodeRef { token, id });
    }
}

impl<E: Element> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let d = self.inner.borrow();
        write!(
            f,
            "Tensor{} requires_grad={} first={:?}",
            d.shape,
            d.requires_grad,
            d.data.first()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_data_checks_element_count() {
        let err = Tensor::<f32>::from_data(Shape::new(1, 1, 2, 2), vec![0.0; 3]);
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn clones_share_storage() {
        let a = Tensor::<f32>::zeros(Shape::new(1, 1, 1, 4));
        let b = a.clone();
        a.map_data_mut(|d| d[2] = 7.0);
        assert_eq!(b.to_vec(), vec![0.0, 0.0, 7.0, 0.0]);
        assert!(a.same_storage(&b));
    }

    #[test]
    fn grad_accumulates_additively() {
        let t = Tensor::<f64>::zeros(Shape::new(1, 1, 1, 2));
        t.accumulate_grad(&[1.0, 2.0]);
        t.accumulate_grad(&[0.5, -1.0]);
        assert_eq!(t.grad().unwrap(), vec![1.5, 1.0]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn item_rejects_non_scalars() {
        let t = Tensor::<f32>::zeros(Shape::new(1, 1, 1, 2));
        assert!(matches!(t.item(), Err(Error::Contract(_))));
        assert_eq!(Tensor::<f32>::scalar(3.0).item().unwrap(), 3.0);
    }
}
