//! Define-by-run gradient tape.
//!
//! Every op appends a node holding its value and, when any parent requires a
//! gradient, a closure mapping the node's output gradient onto its parents.
//! Nodes are appended after their parents, so reverse insertion order is a
//! valid topological order for the backward sweep.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

type BackwardFn = Box<dyn Fn(&[f64], &mut GradSink<'_>)>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    backward: Option<BackwardFn>,
}

/// Receives parent gradients during the backward sweep.
pub struct GradSink<'a> {
    nodes: &'a [Node],
    work: &'a mut [Option<Vec<f64>>],
}

impl GradSink<'_> {
    /// Adds into the gradient buffer of `var`; skipped for constants.
    pub fn accumulate(&mut self, var: Var, f: impl FnOnce(&mut [f64])) {
        let node = &self.nodes[var.0];
        if !node.requires_grad {
            return;
        }
        let len = node.value.len();
        let buf = self.work[var.0].get_or_insert_with(|| vec![0.0; len]);
        f(buf);
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor. Leaves with `requires_grad` collect gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        Ok(self.insert(value, requires_grad, None))
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Accumulated gradient of the last loss(es) with respect to `var`.
    /// Zero for nodes that never received one.
    pub fn grad(&self, var: Var) -> Tensor {
        let value = &self.nodes[var.0].value;
        match &self.grads[var.0] {
            Some(g) => Tensor::new(value.shape().to_vec(), g.clone()).expect("grad shape"),
            None => Tensor::zeros(value.shape()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Propagates d(loss)/d(node) to every node reachable from `loss` and adds
    /// it to the stored gradients. Calling twice without [`Tape::zero_grad`]
    /// accumulates.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut work: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        work[loss.0] = Some(vec![1.0]);
        let Tape { nodes, grads } = self;
        for i in (0..=loss.0).rev() {
            let Some(g) = work[i].take() else { continue };
            if let Some(backward) = &nodes[i].backward {
                let mut sink = GradSink {
                    nodes: &nodes[..],
                    work: &mut work[..],
                };
                backward(&g, &mut sink);
            }
            match &mut grads[i] {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn insert(&mut self, value: Tensor, requires_grad: bool, backward: Option<BackwardFn>) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            backward,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Appends an op result. `make_backward` is only invoked when a parent
    /// requires a gradient, so constant subgraphs never allocate closures.
    pub(crate) fn push<F, B>(
        &mut self,
        op: &'static str,
        value: Tensor,
        parents: &[Var],
        make_backward: F,
    ) -> Result<Var>
    where
        F: FnOnce() -> B,
        B: Fn(&[f64], &mut GradSink<'_>) + 'static,
    {
        if !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let backward = requires_grad.then(|| Box::new(make_backward()) as BackwardFn);
        Ok(self.insert(value, requires_grad, backward))
    }
}
