//! Dense n-dimensional arrays with reverse-mode automatic differentiation.
//!
//! The tape is define-by-run: every operation that runs while gradients are
//! enabled allocates a fresh node holding its inputs and a backward closure,
//! so each forward pass rebuilds the graph from scratch. Node ids increase
//! monotonically with creation order, which makes "sort by id descending" a
//! valid reverse-topological order for [`TensorBase::backward`].

mod conv;
mod elementwise;
mod gemm;
mod shape_ops;
mod stats;

pub use conv::conv2d_reference;
pub use gemm::{gemm_ab, gemm_abt, gemm_atb};

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use num_traits::Float;

use crate::error::{Error, Result};

/// Scalar element of a tensor. The crate trains in `f32` and re-runs
/// gradient checks in `f64`, so everything numeric is generic over this.
pub trait Element:
    Float + num_traits::NumAssign + Default + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn into_f64(self) -> f64 {
        self
    }
}

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(1) };
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Runs `f` with gradient recording disabled; any tensor produced inside is a
/// plain constant. Used for rollouts, targets and evaluation.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    let out = f();
    GRAD_ENABLED.with(|c| c.set(prev));
    out
}

/// Backward closure: receives (upstream grad, this node's output data,
/// parent tensors) and returns one optional gradient buffer per parent.
pub(crate) type BackFn<E> =
    Box<dyn Fn(&[E], &[E], &[TensorBase<E>]) -> Vec<Option<Vec<E>>>>;

struct Inner<E: Element> {
    id: u64,
    shape: Vec<usize>,
    data: RefCell<Vec<E>>,
    grad: RefCell<Option<Vec<E>>>,
    requires_grad: bool,
    parents: Vec<TensorBase<E>>,
    back: Option<BackFn<E>>,
}

/// Reference-counted handle to one tape node. Cloning is cheap and shares
/// data and gradient storage.
pub struct TensorBase<E: Element> {
    inner: Rc<Inner<E>>,
}

/// The default single-precision tensor used throughout training.
pub type Tensor = TensorBase<f32>;

impl<E: Element> Clone for TensorBase<E> {
    fn clone(&self) -> Self {
        TensorBase {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<E: Element> fmt::Debug for TensorBase<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl<E: Element> TensorBase<E> {
    fn new_inner(
        shape: Vec<usize>,
        data: Vec<E>,
        requires_grad: bool,
        parents: Vec<TensorBase<E>>,
        back: Option<BackFn<E>>,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        TensorBase {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad,
                parents,
                back,
            }),
        }
    }

    /// A constant leaf (no gradient).
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::bad_shape(
                "from_vec",
                shape,
                format!("buffer holds {} elements", data.len()),
            ));
        }
        Ok(Self::new_inner(shape.to_vec(), data, false, vec![], None))
    }

    /// A trainable leaf; gradients accumulate here during backward passes.
    /// Panics on a shape/buffer length mismatch, which is a caller bug.
    pub fn leaf_grad(shape: &[usize], data: Vec<E>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "leaf_grad: shape {:?} does not match buffer length {}",
            shape,
            data.len()
        );
        Self::new_inner(shape.to_vec(), data, true, vec![], None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new_inner(
            shape.to_vec(),
            vec![E::zero(); shape.iter().product()],
            false,
            vec![],
            None,
        )
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        Self::new_inner(
            shape.to_vec(),
            vec![value; shape.iter().product()],
            false,
            vec![],
            None,
        )
    }

    pub fn scalar(value: E) -> Self {
        Self::new_inner(vec![1], vec![value], false, vec![], None)
    }

    /// Output node of an operation. Records parents and the backward closure
    /// only when gradients are enabled and some parent needs them; otherwise
    /// the result degenerates to a constant leaf.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<E>,
        parents: Vec<TensorBase<E>>,
        back: BackFn<E>,
    ) -> Self {
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if track {
            Self::new_inner(shape, data, true, parents, Some(back))
        } else {
            Self::new_inner(shape, data, false, vec![], None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.data.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Stable creation id; also the key for caches that memoise per-tensor
    /// results such as frozen backbone statistics.
    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn data(&self) -> Ref<'_, Vec<E>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.inner.data.borrow().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> E {
        let d = self.inner.data.borrow();
        assert_eq!(d.len(), 1, "item() on tensor of {} elements", d.len());
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Mutates the raw buffer in place. Only sensible on leaves (parameters,
    /// noise buffers); the tape holds no record of the change.
    pub fn update_data(&self, f: impl FnOnce(&mut [E])) {
        f(&mut self.inner.data.borrow_mut());
    }

    /// A constant copy cut off from the tape.
    pub fn detach(&self) -> Self {
        Self::new_inner(self.inner.shape.clone(), self.to_vec(), false, vec![], None)
    }

    /// Re-types the element, producing a constant leaf.
    pub fn cast<F: Element>(&self) -> TensorBase<F> {
        let data = self
            .inner
            .data
            .borrow()
            .iter()
            .map(|v| F::from_f64(v.into_f64()))
            .collect();
        TensorBase::new_inner(self.inner.shape.clone(), data, false, vec![], None)
    }

    /// Reverse-mode sweep from a scalar output. Gradients of every reachable
    /// tensor with `requires_grad` are accumulated into their `grad` buffers;
    /// calling backward again without [`TensorBase::zero_grad`] keeps adding.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::bad_shape(
                "backward",
                self.shape(),
                "backward starts from a scalar",
            ));
        }
        if !self.inner.requires_grad {
            return Ok(());
        }

        // Reachable sub-graph, then reverse creation order. Children always
        // carry larger ids than their parents, so descending id order visits
        // every node after all of its consumers.
        let mut topo: Vec<TensorBase<E>> = Vec::new();
        let mut seen: HashMap<u64, ()> = HashMap::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if seen.insert(t.inner.id, ()).is_some() {
                continue;
            }
            for p in &t.inner.parents {
                if p.inner.requires_grad {
                    stack.push(p.clone());
                }
            }
            topo.push(t);
        }
        topo.sort_by(|a, b| b.inner.id.cmp(&a.inner.id));

        let mut flowing: HashMap<u64, Vec<E>> = HashMap::new();
        flowing.insert(self.inner.id, vec![E::one()]);

        for node in &topo {
            let Some(g) = flowing.remove(&node.inner.id) else {
                continue;
            };
            {
                let mut slot = node.inner.grad.borrow_mut();
                match slot.as_mut() {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += *b;
                        }
                    }
                    None => *slot = Some(g.clone()),
                }
            }
            if let Some(back) = &node.inner.back {
                let out_data = node.inner.data.borrow();
                let parent_grads = back(&g, &out_data, &node.inner.parents);
                drop(out_data);
                debug_assert_eq!(parent_grads.len(), node.inner.parents.len());
                for (p, pg) in node.inner.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !p.inner.requires_grad {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), p.len());
                    flowing
                        .entry(p.inner.id)
                        .and_modify(|acc| {
                            for (a, b) in acc.iter_mut().zip(&pg) {
                                *a += *b;
                            }
                        })
                        .or_insert(pg);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 4]).is_ok());
    }

    #[test]
    fn backward_requires_scalar() {
        let t = Tensor::leaf_grad(&[2], vec![1.0, 2.0]);
        assert!(t.backward().is_err());
    }

    #[test]
    fn square_gradient() {
        let x = Tensor::leaf_grad(&[1], vec![3.0]);
        let y = x.square();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn tanh_gradient_at_zero() {
        let x = Tensor::leaf_grad(&[1], vec![0.0]);
        let y = x.tanh();
        y.backward().unwrap();
        assert_eq!(y.item(), 0.0);
        assert_eq!(x.grad().unwrap(), vec![1.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let x = Tensor::leaf_grad(&[1], vec![2.0]);
        let y = x.square();
        y.backward().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![8.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn no_grad_suppresses_tape() {
        let x = Tensor::leaf_grad(&[1], vec![2.0]);
        let y = no_grad(|| x.square());
        assert!(!y.requires_grad());
        assert!(y.backward().is_ok());
        assert!(x.grad().is_none());
    }

    #[test]
    fn diamond_graph_sums_both_paths() {
        // y = x*x + x*x: both products share x, grad = 4x.
        let x = Tensor::leaf_grad(&[1], vec![3.0]);
        let a = x.mul(&x).unwrap();
        let b = x.mul(&x).unwrap();
        let y = a.add(&b).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![12.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let x = Tensor::leaf_grad(&[1], vec![3.0]);
        let y = x.square().detach().square();
        assert!(!y.requires_grad());
        y.backward().unwrap();
        assert!(x.grad().is_none());
    }
}
