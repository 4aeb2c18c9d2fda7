//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only tape. Every operation pushes a node holding its
//! forward value and whatever it needs for the backward pass, so insertion order
//! is a valid topological order. [`Graph::backward`] walks the tape once in
//! reverse, keeping intermediate gradients in scratch space and accumulating
//! only into leaves that require a gradient. Calling it twice without
//! [`Graph::zero_grad`] therefore doubles every leaf gradient.
//!
//! Graphs are rebuilt for every forward pass.

mod gradcheck;
mod ops;

pub use gradcheck::{grad_check, grad_check_coords, GradCheckReport};
pub use ops::AttentionLayout;

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;
use crate::{Error, Result};
use ops::Op;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Persistent gradient; only ever set on leaves.
    grad: Option<Tensor>,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input tensor. Only leaves created with `requires_grad` collect
    /// gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, `None` if no backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Ids of the nodes `v` was computed from.
    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Seeds `d loss = 1` and accumulates gradients into every leaf that
    /// requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.nodes[loss.0].value.shape();
        if shape != (1, 1) {
            return Err(Error::NotScalar(shape));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut scratch: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        scratch[loss.0] = Some(Tensor::scalar(1.0));
        let mut leaf_grads: Vec<(usize, Tensor)> = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(upstream) = scratch[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                leaf_grads.push((i, upstream));
                continue;
            }
            ops::backward_node(&self.nodes, i, &upstream, &mut scratch);
        }
        for (i, g) in leaf_grads {
            match &mut self.nodes[i].grad {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }
}

/// Adds into the scratch gradient of `v`, allocating zeros on first touch.
/// Inputs that do not require a gradient are skipped.
fn accumulate(
    nodes: &[Node],
    scratch: &mut [Option<Tensor>],
    v: Var,
    f: impl FnOnce(&mut Tensor),
) {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return;
    }
    let slot = scratch[v.0].get_or_insert_with(|| {
        let (r, c) = node.value.shape();
        Tensor::zeros(r, c)
    });
    f(slot);
}
