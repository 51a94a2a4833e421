use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use crate::{Error, Result};

/// Computes the gradient contribution for each parent from the gradient of
/// the output. `needs[i]` is false for parents that do not require a
/// gradient; the closure may return `None` for them.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct GradFn {
    parents: Vec<Tensor>,
    apply: BackwardFn,
}

struct Node {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    grad: RefCell<Vec<f64>>,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

/// A row-major `f64` array that is also a node of a computation graph.
///
/// Cloning is cheap and yields another handle to the same node. Leaves are
/// created with [`Tensor::new`] (constant) or [`Tensor::variable`] /
/// [`Tensor::parameter`] (gradient tracked); every operation in
/// [`crate::diffcore`] returns a new node remembering how to propagate
/// gradients to its inputs.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn leaf(shape: Vec<usize>, data: Arc<Vec<f64>>, requires_grad: bool) -> Result<Self> {
        if numel(&shape) != data.len() {
            return Err(Error::shape("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor(Rc::new(Node { shape, data, grad: RefCell::new(Vec::new()), requires_grad, grad_fn: None })))
    }

    /// Constant leaf; never receives a gradient.
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.to_vec(), Arc::new(values), false)
    }

    /// Leaf whose gradient is accumulated by [`Tensor::backward`].
    pub fn variable(shape: &[usize], values: Vec<f64>) -> Result<Self> {
        Self::leaf(shape.to_vec(), Arc::new(values), true)
    }

    /// Gradient-tracked leaf sharing storage with a parameter buffer.
    pub fn parameter(shape: &[usize], values: Arc<Vec<f64>>) -> Result<Self> {
        Self::leaf(shape.to_vec(), values, true)
    }

    /// Constant sharing an existing buffer.
    pub(crate) fn shared(shape: &[usize], values: Arc<Vec<f64>>) -> Result<Self> {
        Self::leaf(shape.to_vec(), values, false)
    }

    pub fn scalar(value: f64) -> Self {
        Self::leaf(Vec::new(), Arc::new(vec![value]), false).expect("scalar shape")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(shape, vec![0.0; numel(shape)]).expect("consistent shape")
    }

    /// Result of an operation. The gradient function is only retained when
    /// some parent requires a gradient.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, parents: Vec<Tensor>, apply: BackwardFn) -> Self {
        Self::from_op_shared(shape, Arc::new(data), parents, apply)
    }

    /// As [`Tensor::from_op`], for results that reuse an existing buffer.
    pub(crate) fn from_op_shared(
        shape: Vec<usize>,
        data: Arc<Vec<f64>>,
        parents: Vec<Tensor>,
        apply: BackwardFn,
    ) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        Tensor(Rc::new(Node {
            shape,
            data,
            grad: RefCell::new(Vec::new()),
            requires_grad,
            grad_fn: requires_grad.then_some(GradFn { parents, apply }),
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0.data
    }

    pub(crate) fn data_arc(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.0.data)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// Accumulated gradient, same length as [`Tensor::values`].
    pub fn grad(&self) -> Vec<f64> {
        let g = self.0.grad.borrow();
        if g.is_empty() {
            vec![0.0; self.numel()]
        } else {
            g.clone()
        }
    }

    pub fn zero_grad(&self) {
        self.0.grad.borrow_mut().clear();
    }

    fn grad_ref(&self) -> Ref<'_, Vec<f64>> {
        self.0.grad.borrow()
    }

    fn accumulate(&self, contribution: &[f64]) {
        let mut g = self.0.grad.borrow_mut();
        if g.is_empty() {
            g.extend_from_slice(contribution);
        } else {
            for (a, b) in g.iter_mut().zip(contribution) {
                *a += b;
            }
        }
    }

    fn ptr(&self) -> *const Node {
        Rc::as_ptr(&self.0)
    }

    /// Reverse-mode sweep from a one-element root.
    ///
    /// Gradients of intermediate nodes are recomputed on every call; leaf
    /// gradients accumulate across calls until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::shape("backward", self.shape(), &[]));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topological_order();
        for node in &order {
            if !node.is_leaf() {
                let mut g = node.0.grad.borrow_mut();
                g.clear();
                g.resize(node.numel(), 0.0);
            }
        }
        self.accumulate(&[1.0]);
        for node in order.iter().rev() {
            let Some(grad_fn) = &node.0.grad_fn else {
                continue;
            };
            let needs: Vec<bool> = grad_fn.parents.iter().map(Tensor::requires_grad).collect();
            let contributions = {
                let g = node.grad_ref();
                (grad_fn.apply)(&g, &needs)
            };
            for ((parent, contribution), need) in grad_fn.parents.iter().zip(contributions).zip(needs) {
                if let (true, Some(c)) = (need, contribution) {
                    parent.accumulate(&c);
                }
            }
        }
        Ok(())
    }

    /// Post-order (parents before children) over nodes requiring gradients.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.ptr()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(grad_fn) = &node.0.grad_fn {
                for p in grad_fn.parents.iter().rev() {
                    if p.requires_grad() && !visited.contains(&p.ptr()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish_non_exhaustive()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{mul, sum};

    #[test]
    fn shape_must_match_values() {
        assert!(Tensor::new(&[2, 2], vec![1.0; 3]).is_err());
        let t = Tensor::new(&[2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.grad().len(), 6);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let x = Tensor::variable(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(x.backward(), Err(Error::Shape { .. })));
    }

    #[test]
    fn root_gradient_is_one() {
        let x = Tensor::variable(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let y = sum(&x);
        y.backward().unwrap();
        assert_eq!(y.grad(), vec![1.0]);
        assert_eq!(x.grad(), vec![1.0; 3]);
    }

    #[test]
    fn constant_leaves_keep_zero_grad() {
        let c = Tensor::new(&[2], vec![3.0, 4.0]).unwrap();
        let x = Tensor::variable(&[2], vec![1.0, 2.0]).unwrap();
        let y = sum(&mul(&x, &c).unwrap());
        y.backward().unwrap();
        assert_eq!(c.grad(), vec![0.0, 0.0]);
        assert_eq!(x.grad(), vec![3.0, 4.0]);
    }

    #[test]
    fn reused_tensor_sums_contributions() {
        let x = Tensor::variable(&[3], vec![-1.5, 0.25, 2.0]).unwrap();
        let y = sum(&mul(&x, &x).unwrap());
        y.backward().unwrap();
        assert_eq!(x.grad(), vec![-3.0, 0.5, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates_on_leaves() {
        let x = Tensor::variable(&[2], vec![1.0, 2.0]).unwrap();
        let y = sum(&mul(&x, &x).unwrap());
        y.backward().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad(), vec![4.0, 8.0]);
        x.zero_grad();
        assert_eq!(x.grad(), vec![0.0, 0.0]);
    }
}
