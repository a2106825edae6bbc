//! The tensor value type and the reverse-mode sweep.
//!
//! A [`Tensor`] is a shared handle to a row-major `f64` buffer. Operations
//! whose inputs require gradients attach a [`Node`] to their output holding
//! the parent handles and a closure that maps the output gradient to one
//! gradient per parent. The graph is rebuilt on every forward pass.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};
use rand::Rng;

use crate::error::{Result, TensorError};

/// Maps the gradient of an op's output to a gradient for each parent.
/// `None` means "no contribution" (the parent does not need one).
pub type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

pub(crate) struct Node {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    shape: Vec<usize>,
    data: RwLock<Vec<f64>>,
    grad: Mutex<Option<Vec<f64>>>,
    requires_grad: bool,
    node: Option<Node>,
}

#[derive(Clone)]
pub struct Tensor {
    inner: Arc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.inner.data.read();
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.inner.shape);
        if data.len() <= 16 {
            s.field("data", &*data);
        }
        if let Some(node) = &self.inner.node {
            s.field("op", &node.op);
        }
        s.field("requires_grad", &self.inner.requires_grad).finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(TensorError::invalid(
            "tensor",
            format!("shape {shape:?} must have positive dimensions"),
        ));
    }
    if numel(shape) != len {
        return Err(TensorError::invalid(
            "tensor",
            format!("shape {shape:?} does not hold {len} elements"),
        ));
    }
    Ok(())
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, node: Option<Node>) -> Self {
        Tensor {
            inner: Arc::new(Inner {
                shape,
                data: RwLock::new(data),
                grad: Mutex::new(None),
                requires_grad,
                node,
            }),
        }
    }

    /// A constant: never receives a gradient.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, false, None))
    }

    /// A trainable leaf.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::build(shape.to_vec(), data, true, None))
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![1], vec![value], false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && !shape.contains(&0),
            "shape {shape:?} must have positive dimensions"
        );
        Self::build(shape.to_vec(), vec![value; numel(shape)], false, None)
    }

    /// Samples every element uniformly from `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self::build(shape.to_vec(), data, false, None)
    }

    /// Returns a leaf sharing nothing with `self`, with the given grad flag.
    pub fn with_requires_grad(&self, requires_grad: bool) -> Self {
        Self::build(self.shape().to_vec(), self.to_vec(), requires_grad, None)
    }

    /// Cuts the graph: same values, no history, no gradient.
    pub fn detach(&self) -> Self {
        self.with_requires_grad(false)
    }

    /// Records the result of an op. The backward closure is only built when
    /// some parent takes part in differentiation.
    pub fn from_op<F>(
        data: Vec<f64>,
        shape: &[usize],
        op: &'static str,
        parents: Vec<Tensor>,
        backward: F,
    ) -> Self
    where
        F: FnOnce() -> BackwardFn,
    {
        debug_assert_eq!(numel(shape), data.len(), "{op}: bad output buffer");
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let node = requires_grad.then(|| Node {
            op,
            parents,
            backward: backward(),
        });
        Self::build(shape.to_vec(), data, requires_grad, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.inner.node.as_ref().map(|n| n.op)
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f64>> {
        self.inner.data.read()
    }

    /// Mutable access to the values. Used by optimizers, checkpoint loading
    /// and finite-difference probes; mutating a tensor that already feeds a
    /// recorded graph invalidates that graph's gradients.
    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<f64>> {
        self.inner.data.write()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.read().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let data = self.inner.data.read();
        assert_eq!(data.len(), 1, "item() on tensor of shape {:?}", self.shape());
        data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.lock().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock() = None;
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }

    fn key(&self) -> *const Inner {
        Arc::as_ptr(&self.inner)
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.inner.grad.lock();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse sweep from a one-element root. Gradients accumulate into the
    /// `grad` slot of every reachable tensor that requires one, so callers
    /// zero parameter gradients between steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarBackward(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topological_order();
        let mut pending: HashMap<*const Inner, Vec<f64>> = HashMap::new();
        pending.insert(self.key(), vec![1.0]);

        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.key()) else {
                continue;
            };
            if let Some(node) = &t.inner.node {
                let parent_grads = (node.backward)(&g);
                debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", node.op);
                for (parent, pg) in node.parents.iter().zip(parent_grads) {
                    let Some(pg) = pg else { continue };
                    if !parent.requires_grad() {
                        continue;
                    }
                    debug_assert_eq!(pg.len(), parent.numel(), "{}: grad size", node.op);
                    match pending.get_mut(&parent.key()) {
                        Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                        None => {
                            pending.insert(parent.key(), pg);
                        }
                    }
                }
            }
            t.accumulate_grad(&g);
        }
        Ok(())
    }

    /// Post-order over the grad-requiring subgraph; parents are visited in
    /// declaration order so the sweep is deterministic.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        seen.insert(self.key());
        while let Some((t, next)) = stack.pop() {
            let parents = t.inner.node.as_ref().map(|n| n.parents.as_slice()).unwrap_or(&[]);
            if next < parents.len() {
                let p = parents[next].clone();
                stack.push((t, next + 1));
                if p.requires_grad() && seen.insert(p.key()) {
                    stack.push((p, 0));
                }
            } else {
                order.push(t);
            }
        }
        order
    }
}
