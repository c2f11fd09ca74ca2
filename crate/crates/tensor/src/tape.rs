//! The computation tape: every forward op appends a node holding its value,
//! and `backward` walks the nodes in reverse insertion order.

use crate::error::{Result, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    Affine(Var, f64),
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Bmm {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Relu(Var),
    Prelu(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sum(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    Gather(Var, Vec<usize>),
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Dropout(Var, Vec<f64>),
    GcnNormalize(Var),
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) value: Vec<f64>,
    pub(crate) grad: Vec<f64>,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Append-only record of a forward computation.
///
/// A tape supports exactly one backward pass; call [`Tape::reset`] (or build
/// a new tape) before recording another computation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
    backward_done: bool,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backward_done = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input value. Gradients are only tracked when `requires_grad`.
    pub fn leaf(&mut self, values: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Var> {
        if numel(shape) != values.len() {
            return Err(TensorError::ShapeMismatch {
                op: "leaf",
                left: shape.to_vec(),
                right: vec![values.len()],
            });
        }
        self.push_checked("leaf", shape.to_vec(), values, Op::Leaf, requires_grad)
    }

    /// Records a constant (no gradient).
    pub fn constant(&mut self, values: Vec<f64>, shape: &[usize]) -> Result<Var> {
        self.leaf(values, shape, false)
    }

    pub fn scalar(&mut self, value: f64) -> Result<Var> {
        self.leaf(vec![value], &[1], false)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the loss with respect to `v`, available after [`Tape::backward`].
    /// Returns `None` for values that do not require a gradient or were not
    /// reached by the backward pass.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        let node = &self.nodes[v.0];
        if !node.requires_grad || node.grad.is_empty() {
            None
        } else {
            Some(&node.grad)
        }
    }

    /// Like [`Tape::grad`] but yields zeros for unreached values.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<f64> {
        match self.grad(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.nodes[v.0].value.len()],
        }
    }

    pub(crate) fn push_checked(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
        requires_grad: bool,
    ) -> Result<Var> {
        debug_assert_eq!(numel(&shape), value.len(), "{op_name}");
        if value.iter().any(|x| !x.is_finite()) {
            return Err(TensorError::NonFinite { op: op_name });
        }
        self.nodes.push(Node {
            shape,
            value,
            grad: Vec::new(),
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Runs reverse-mode differentiation from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let shape = self.nodes[loss.0].shape.clone();
        if numel(&shape) != 1 {
            return Err(TensorError::NotScalar(shape));
        }
        self.backward_done = true;
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = vec![1.0];
        for k in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(k);
            let node = &rest[0];
            if !node.requires_grad || node.grad.is_empty() {
                continue;
            }
            crate::backward::propagate(node, before);
        }
        Ok(())
    }
}

/// Adds `delta` into the gradient buffer of `v` (allocating it on first use).
pub(crate) fn accumulate(nodes: &mut [Node], v: Var, delta: impl IntoIterator<Item = f64>) {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return;
    }
    if node.grad.is_empty() {
        node.grad = vec![0.0; node.value.len()];
    }
    for (g, d) in node.grad.iter_mut().zip(delta) {
        *g += d;
    }
}

/// Mutable access to the gradient buffer of `v`, or `None` when `v` does not
/// take gradients.
pub(crate) fn grad_mut(nodes: &mut [Node], v: Var) -> Option<&mut Vec<f64>> {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    if node.grad.is_empty() {
        node.grad = vec![0.0; node.value.len()];
    }
    Some(&mut node.grad)
}
