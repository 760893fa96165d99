//! Reverse-mode differentiation over a recorded tape of [`Op`]s.
//!
//! Inner-loop gradients are written out analytically with ordinary
//! primitives, so one reverse pass over the tape already differentiates
//! through the inner updates; no nested tapes are needed.

mod gradcheck;
mod rules;

use alloc::vec;
use alloc::vec::Vec;

use crate::ops::{check_finite, eval, OpStats};
use crate::{Error, Op, Ops, Real, Result, Tensor};

pub use gradcheck::{gradcheck, GradcheckReport};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Constant,
    Param,
    Op(Op),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    kind: Kind,
    inputs: Vec<usize>,
    needs_grad: bool,
}

/// Ordered record of evaluated primitives. Inputs always precede the nodes
/// that consume them.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    pub check_finite: bool,
    pub stats: OpStats,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self { nodes: Vec::new(), check_finite: cfg!(debug_assertions), stats: OpStats::default() }
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Kind::Param, Vec::new(), true)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Largest element count held by any node.
    pub fn max_node_numel(&self) -> usize {
        self.nodes.iter().map(|n| n.value.numel()).max().unwrap_or(0)
    }

    fn push(&mut self, value: Tensor<T>, kind: Kind, inputs: Vec<usize>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, kind, inputs, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Gradient of the scalar `root` with respect to every parameter leaf.
    ///
    /// Each node is visited once, in reverse recording order.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_node = self.nodes.get(root.0).ok_or(Error::Contract("unknown root node"))?;
        if root_node.value.numel() != 1 {
            return Err(Error::Contract("backward root must be a scalar"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(root_node.value.shape(), T::one()));
        let mut params: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(g) = grads[i].take() else { continue };
            match &node.kind {
                Kind::Constant => {}
                Kind::Param => params[i] = Some(g),
                Kind::Op(op) => {
                    if !node.needs_grad {
                        continue;
                    }
                    let args: Vec<&Tensor<T>> = node.inputs.iter().map(|&j| &self.nodes[j].value).collect();
                    let need: Vec<bool> = node.inputs.iter().map(|&j| self.nodes[j].needs_grad).collect();
                    let input_grads = rules::vjp(op, &args, &node.value, &g, &need)?;
                    for (&j, ig) in node.inputs.iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        match &mut grads[j] {
                            Some(acc) => acc.add_assign(&ig)?,
                            slot @ None => *slot = Some(ig),
                        }
                    }
                }
            }
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.kind, Kind::Param) && params[i].is_none() {
                params[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads: params })
    }
}

impl<T: Real> Ops<T> for Tape<T> {
    type V = Var;

    fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Kind::Constant, Vec::new(), false)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }

    fn apply(&mut self, op: Op, args: &[&Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = args.iter().map(|v| &self.nodes[v.0].value).collect();
        let out = eval(&op, &values)?;
        self.stats.record(&op, &values, &out);
        if self.check_finite {
            check_finite(&op, &out)?;
        }
        let inputs: Vec<usize> = args.iter().map(|v| v.0).collect();
        let needs_grad = inputs.iter().any(|&j| self.nodes[j].needs_grad);
        Ok(self.push(out, Kind::Op(op), inputs, needs_grad))
    }
}

/// Parameter gradients produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// `∂root/∂param`; zeros for parameters the root does not depend on.
    pub fn wrt(&self, param: Var) -> Result<&Tensor<T>> {
        self.grads
            .get(param.0)
            .and_then(Option::as_ref)
            .ok_or(Error::Contract("gradient requested for a non-parameter node"))
    }
}
