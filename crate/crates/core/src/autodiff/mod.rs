//! Reverse-mode automatic differentiation on a Wengert tape.
//!
//! A [`Tape`] records every primitive executed through it in execution
//! order, so node inputs always precede the node. [`Tape::backward`] walks
//! the record once in reverse and accumulates `∂loss/∂leaf` into every leaf
//! that was registered with `requires_grad`. Values on the tape are never
//! mutated after they are recorded.

mod gradcheck;
mod ops;

use std::cell::{Ref, RefCell};

pub use gradcheck::{grad_check, GradCheckReport};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Exp,
    Ln,
    Sqrt,
    Square,
    Tanh,
    Sigmoid,
    Relu,
    Gelu,
    Selu,
}

#[derive(Debug)]
pub(crate) enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, S),
    AddScalar(Var),
    Unary(Var, Unary),
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    /// Sum down to the node's (keepdim) shape.
    SumTo(Var),
    Softmax(Var),
    LogSoftmax(Var),
    /// Per-row normalization over the last axis; holds 1/σ per row.
    Normalize(Var, Vec<S>),
    Conv1d {
        x: Var,
        w: Var,
        padding: usize,
    },
    MaxPool1d {
        x: Var,
        argmax: Vec<usize>,
    },
}

impl<S> Op<S> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Unary(x, _)
            | Op::Permute(x, _)
            | Op::Reshape(x)
            | Op::Slice(x, _, _)
            | Op::SumTo(x)
            | Op::Softmax(x)
            | Op::LogSoftmax(x)
            | Op::Normalize(x, _)
            | Op::MaxPool1d { x, .. } => vec![*x],
            Op::Concat(xs, _) => xs.clone(),
            Op::Conv1d { x, w, .. } => vec![*x, *w],
        }
    }
}

pub(crate) struct Node<S> {
    pub(crate) value: Tensor<S>,
    pub(crate) op: Op<S>,
    pub(crate) requires_grad: bool,
    pub(crate) grad: Option<Tensor<S>>,
}

/// Ordered record of executed primitives.
///
/// Single-threaded by construction; independent tapes may live on
/// different threads.
pub struct Tape<S> {
    nodes: RefCell<Vec<Node<S>>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Registers an input. Rejects non-finite data.
    pub fn leaf(&self, value: Tensor<S>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    /// Shorthand for a leaf that does not require a gradient.
    pub fn constant(&self, value: Tensor<S>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> Ref<'_, Tensor<S>> {
        Ref::map(self.nodes.borrow(), |n| &n[v.0].value)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf; `None` if it never received one.
    pub fn grad(&self, v: Var) -> Option<Tensor<S>> {
        self.nodes.borrow()[v.0].grad.clone()
    }

    /// Accumulated gradient of a leaf, zeros if it was not on the loss path.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor<S> {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.0];
        n.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(n.value.shape()))
    }

    pub fn zero_grads(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    pub(crate) fn push(&self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(nodes.len() - 1)
    }

    pub(crate) fn any_requires_grad(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    /// Back-propagates from a scalar loss, accumulating into leaf gradients.
    ///
    /// Leaves that require a gradient but are not on the loss path receive
    /// zeros. Calling this repeatedly without [`Tape::zero_grads`] sums the
    /// contributions.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(Error::Detached);
        }
        let mut grads: Vec<Option<Tensor<S>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::ones(root.value.shape()));
        let mut leaf_grads: Vec<(usize, Tensor<S>)> = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads.push((i, g));
                continue;
            }
            let inputs = node.op.inputs();
            let need: Vec<bool> = inputs.iter().map(|v| nodes[v.0].requires_grad).collect();
            let input_grads = ops::backward_rule(&nodes, node, &g, &need);
            for ((v, ig), needed) in inputs.iter().zip(input_grads).zip(need) {
                if !needed {
                    continue;
                }
                if let Some(ig) = ig {
                    match &mut grads[v.0] {
                        Some(acc) => acc.add_assign(&ig),
                        slot @ None => *slot = Some(ig),
                    }
                }
            }
        }
        drop(nodes);

        let mut nodes = self.nodes.borrow_mut();
        for (i, g) in leaf_grads {
            match &mut nodes[i].grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        for n in nodes[..=loss.0].iter_mut() {
            if n.requires_grad && matches!(n.op, Op::Leaf) && n.grad.is_none() {
                n.grad = Some(Tensor::zeros(n.value.shape()));
            }
        }
        Ok(())
    }
}
