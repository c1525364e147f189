//! Dense rank-4 tensors (NCHW) with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap handle (`Rc`) to an immutable payload. Operations
//! that involve at least one gradient-tracked input record a backward closure
//! and keep handles to the inputs they need; [`backward`] walks that graph
//! once in reverse topological order. Operations on untracked inputs build no
//! graph at all, so inference holds only the tensors the caller keeps alive.

mod meter;
mod scalar;

pub mod ops;

pub use meter::{live_bytes, macs, peak_bytes, reset_macs, reset_peak};
pub use scalar::{Dtype, Scalar};

pub(crate) use meter::add_macs;

use crate::error::{CtunError, Result};
use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

/// NCHW extents. All dims are at least 1.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        assert!(
            n >= 1 && c >= 1 && h >= 1 && w >= 1,
            "tensor dims must all be >= 1, got ({n},{c},{h},{w})"
        );
        Shape { n, c, h, w }
    }

    pub fn count(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    #[inline(always)]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub fn is_scalar(&self) -> bool {
        self.count() == 1
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

/// Meter-tracked payload. Dropping it returns its bytes to the meter.
pub(crate) struct Payload<E: Scalar> {
    data: Vec<E>,
}

impl<E: Scalar> Payload<E> {
    fn new(data: Vec<E>) -> Self {
        meter::on_alloc(data.len() * std::mem::size_of::<E>());
        Payload { data }
    }
}

impl<E: Scalar> Drop for Payload<E> {
    fn drop(&mut self) {
        meter::on_free(self.data.len() * std::mem::size_of::<E>());
    }
}

/// Backward closure: given d(loss)/d(output), produce d(loss)/d(parent) for
/// each parent (None where the parent does not track gradients).
type BackpropFn<E> = Box<dyn Fn(&[E]) -> Vec<Option<Vec<E>>>>;

struct Inner<E: Scalar> {
    shape: Shape,
    data: RefCell<Payload<E>>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<E>>>,
    parents: Vec<Tensor<E>>,
    backprop: Option<BackpropFn<E>>,
}

/// Rank-4 NCHW tensor handle. Cloning shares the payload.
pub struct Tensor<E: Scalar>(Rc<Inner<E>>);

impl<E: Scalar> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<E: Scalar> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor{}[{:?}, tracked={}]",
            self.0.shape,
            E::DTYPE,
            self.tracked()
        )
    }
}

impl<E: Scalar> Tensor<E> {
    /// Leaf tensor from raw data. `requires_grad` marks it as a trainable
    /// parameter: `backward` will populate its `grad`.
    pub fn leaf(data: Vec<E>, shape: Shape, requires_grad: bool) -> Self {
        assert_eq!(
            data.len(),
            shape.count(),
            "payload length {} does not match shape {}",
            data.len(),
            shape
        );
        Tensor(Rc::new(Inner {
            shape,
            data: RefCell::new(Payload::new(data)),
            requires_grad,
            grad: RefCell::new(None),
            parents: Vec::new(),
            backprop: None,
        }))
    }

    /// Constant (untracked) tensor.
    pub fn from_vec(data: Vec<E>, shape: Shape) -> Self {
        Self::leaf(data, shape, false)
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::from_vec(vec![E::ZERO; shape.count()], shape)
    }

    pub fn full(shape: Shape, value: E) -> Self {
        Self::from_vec(vec![value; shape.count()], shape)
    }

    /// Scalar tensor of shape (1,1,1,1).
    pub fn scalar(value: E) -> Self {
        Self::from_vec(vec![value], Shape::new(1, 1, 1, 1))
    }

    /// Operation output. Attaches the backward closure only when some input
    /// tracks gradients; otherwise the closure (and whatever it captured) is
    /// dropped immediately and no graph is built.
    pub(crate) fn from_op(
        data: Vec<E>,
        shape: Shape,
        parents: Vec<Tensor<E>>,
        backprop: BackpropFn<E>,
    ) -> Self {
        assert_eq!(data.len(), shape.count());
        let tracked = parents.iter().any(|p| p.tracked());
        if tracked {
            Tensor(Rc::new(Inner {
                shape,
                data: RefCell::new(Payload::new(data)),
                requires_grad: false,
                grad: RefCell::new(None),
                parents,
                backprop: Some(backprop),
            }))
        } else {
            Self::from_vec(data, shape)
        }
    }

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    /// Whether this tensor participates in gradient computation.
    pub fn tracked(&self) -> bool {
        self.0.requires_grad || self.0.backprop.is_some()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Borrow the payload.
    pub fn data(&self) -> Ref<'_, [E]> {
        Ref::map(self.0.data.borrow(), |p| p.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.data().to_vec()
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> E {
        assert!(self.0.shape.is_scalar(), "item() on non-scalar tensor");
        self.data()[0]
    }

    /// Accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// In-place payload mutation. Reserved for the optimizer's parameter
    /// update and for finite-difference probes; both operate on leaves.
    pub fn update_data(&self, f: impl FnOnce(&mut [E])) {
        assert!(
            self.0.parents.is_empty(),
            "in-place update is only valid on leaf tensors"
        );
        f(&mut self.0.data.borrow_mut().data);
    }

    fn ptr(&self) -> *const () {
        Rc::as_ptr(&self.0) as *const ()
    }

    fn accumulate_grad(&self, g: &[E]) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(existing) => {
                for (e, v) in existing.iter_mut().zip(g) {
                    *e = e.add(*v);
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }
}

/// Reverse-mode backpropagation from a scalar loss.
///
/// Populates `grad` on every `requires_grad` leaf reachable from `loss`.
/// Repeated calls without `zero_grad` accumulate.
pub fn backward<E: Scalar>(loss: &Tensor<E>) -> Result<()> {
    if !loss.shape().is_scalar() {
        return Err(CtunError::NonScalarLoss {
            shape: loss.shape().to_string(),
        });
    }

    // Iterative post-order DFS; each node enters the order exactly once.
    let mut order: Vec<Tensor<E>> = Vec::new();
    let mut visited: HashMap<*const (), ()> = HashMap::new();
    let mut stack: Vec<(Tensor<E>, usize)> = vec![(loss.clone(), 0)];
    while let Some((node, child)) = stack.pop() {
        if child == 0 {
            if visited.contains_key(&node.ptr()) {
                continue;
            }
            visited.insert(node.ptr(), ());
        }
        if child < node.0.parents.len() {
            let parent = node.0.parents[child].clone();
            stack.push((node, child + 1));
            if !visited.contains_key(&parent.ptr()) && parent.tracked() {
                stack.push((parent, 0));
            }
        } else {
            order.push(node);
        }
    }

    let mut grads: HashMap<*const (), Vec<E>> = HashMap::new();
    grads.insert(loss.ptr(), vec![E::ONE]);

    for node in order.iter().rev() {
        let Some(gout) = grads.remove(&node.ptr()) else {
            continue;
        };
        if node.0.requires_grad {
            node.accumulate_grad(&gout);
        }
        if let Some(backprop) = &node.0.backprop {
            let parent_grads = backprop(&gout);
            debug_assert_eq!(parent_grads.len(), node.0.parents.len());
            for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                debug_assert_eq!(pg.len(), parent.shape().count());
                match grads.get_mut(&parent.ptr()) {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&pg) {
                            *a = a.add(*v);
                        }
                    }
                    None => {
                        grads.insert(parent.ptr(), pg);
                    }
                }
            }
        }
    }
    Ok(())
}
