//! Define-by-run computation graphs.
//!
//! Model code is written once against [`Graph`]. A [`Tape`] records every
//! primitive for reverse-mode differentiation; an [`Eval`] graph computes
//! values only and is what planners use for large tape-free rollouts.

use std::rc::Rc;

use crate::prim::{self, DiffError, Prim};
use crate::tensor::Tensor;

/// Index of a trainable tensor inside a parameter list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

pub trait Graph {
    type Var: Clone;

    /// Leaf for a trainable parameter. Repeated calls return the same leaf.
    fn param(&mut self, id: ParamId) -> Self::Var;

    fn constant(&mut self, t: Tensor) -> Self::Var;

    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Tensor;

    fn apply(&mut self, op: Prim, inputs: &[&Self::Var]) -> Result<Self::Var, DiffError>;

    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var, DiffError> {
        self.apply(Prim::MatMul, &[a, b])
    }

    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var, DiffError> {
        self.apply(Prim::Add, &[a, b])
    }

    fn sub(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var, DiffError> {
        self.apply(Prim::Sub, &[a, b])
    }

    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var, DiffError> {
        self.apply(Prim::Mul, &[a, b])
    }

    fn add_row(&mut self, a: &Self::Var, bias: &Self::Var) -> Result<Self::Var, DiffError> {
        self.apply(Prim::AddRow, &[a, bias])
    }

    fn scale(&mut self, a: &Self::Var, s: f64) -> Result<Self::Var, DiffError> {
        self.apply(Prim::Scale(s), &[a])
    }

    fn relu(&mut self, a: &Self::Var) -> Result<Self::Var, DiffError> {
        self.apply(Prim::Relu, &[a])
    }

    fn sin(&mut self, a: &Self::Var) -> Result<Self::Var, DiffError> {
        self.apply(Prim::Sin, &[a])
    }

    fn cos(&mut self, a: &Self::Var) -> Result<Self::Var, DiffError> {
        self.apply(Prim::Cos, &[a])
    }

    fn square(&mut self, a: &Self::Var) -> Result<Self::Var, DiffError> {
        self.apply(Prim::Square, &[a])
    }

    fn sum(&mut self, a: &Self::Var) -> Result<Self::Var, DiffError> {
        self.apply(Prim::Sum, &[a])
    }

    fn mean(&mut self, a: &Self::Var) -> Result<Self::Var, DiffError> {
        self.apply(Prim::Mean, &[a])
    }

    fn concat(&mut self, parts: &[&Self::Var]) -> Result<Self::Var, DiffError> {
        self.apply(Prim::Concat, parts)
    }

    fn select(&mut self, a: &Self::Var, cols: &[usize]) -> Result<Self::Var, DiffError> {
        self.apply(Prim::Select(cols.to_vec()), &[a])
    }

    /// Contiguous column range `[start, start + len)`.
    fn slice(&mut self, a: &Self::Var, start: usize, len: usize) -> Result<Self::Var, DiffError> {
        let cols: Vec<usize> = (start..start + len).collect();
        self.select(a, &cols)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum NodeKind {
    Param(ParamId),
    Constant,
    Op { prim: Prim, inputs: Vec<NodeId> },
}

#[derive(Debug)]
struct Node {
    kind: NodeKind,
    value: Tensor,
    needs_grad: bool,
}

/// Recording graph. Nodes are appended in evaluation order, so every
/// node's inputs precede it and the backward sweep is a reverse scan.
pub struct Tape<'p> {
    params: &'p [Tensor],
    param_nodes: Vec<Option<NodeId>>,
    nodes: Vec<Node>,
}

/// Reverse-mode gradients, one slot per parameter. Parameters that the
/// root does not depend on get zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub per_param: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &[Tensor]) -> Self {
        Self { per_param: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect() }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.per_param[id.0]
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.per_param.iter_mut().zip(&other.per_param) {
            a.add_assign(b);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.per_param.iter().all(Tensor::is_finite)
    }

    /// All gradient entries, concatenated in parameter order.
    pub fn flatten(&self) -> Vec<f64> {
        self.per_param.iter().flat_map(|t| t.data().iter().copied()).collect()
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Self { params, param_nodes: vec![None; params.len()], nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, kind: NodeKind, value: Tensor, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { kind, value, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    /// Gradients of the scalar `root` with respect to every parameter.
    pub fn backward(&self, root: NodeId) -> Result<Gradients, DiffError> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(DiffError::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut adjoints: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adjoints[root.0] = Some(Tensor::full(root_value.shape().to_vec(), 1.0));
        let mut grads = Gradients::zeros_like(self.params);

        for idx in (0..=root.0).rev() {
            let Some(adj) = adjoints[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.kind {
                NodeKind::Param(pid) => grads.per_param[pid.0].add_assign(&adj),
                NodeKind::Constant => {}
                NodeKind::Op { prim, inputs } => {
                    let values: Vec<&Tensor> = inputs.iter().map(|n| &self.nodes[n.0].value).collect();
                    let wanted: Vec<bool> = inputs.iter().map(|n| self.nodes[n.0].needs_grad).collect();
                    let local = prim::backward(prim, &values, &node.value, &adj, &wanted);
                    for (input, g) in inputs.iter().zip(local) {
                        let Some(g) = g else { continue };
                        match &mut adjoints[input.0] {
                            Some(acc) => acc.add_assign(&g),
                            slot => *slot = Some(g),
                        }
                    }
                }
            }
        }
        Ok(grads)
    }
}

impl Graph for Tape<'_> {
    type Var = NodeId;

    fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        let n = self.push(NodeKind::Param(id), self.params[id.0].clone(), true);
        self.param_nodes[id.0] = Some(n);
        n
    }

    fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(NodeKind::Constant, t, false)
    }

    fn value<'a>(&'a self, v: &'a NodeId) -> &'a Tensor {
        &self.nodes[v.0].value
    }

    fn apply(&mut self, op: Prim, inputs: &[&NodeId]) -> Result<NodeId, DiffError> {
        let values: Vec<&Tensor> = inputs.iter().map(|n| &self.nodes[n.0].value).collect();
        let out = prim::forward(&op, &values)?;
        if !out.is_finite() {
            return Err(DiffError::NonFinite { op: op.name() });
        }
        let needs_grad = inputs.iter().any(|n| self.nodes[n.0].needs_grad);
        let ids = inputs.iter().map(|n| **n).collect();
        Ok(self.push(NodeKind::Op { prim: op, inputs: ids }, out, needs_grad))
    }
}

/// Value-only graph. Non-finite values propagate instead of erroring so a
/// batch of planner rollouts can discard only the diverged rows.
pub struct Eval<'p> {
    params: &'p [Tensor],
    cache: Vec<Option<Rc<Tensor>>>,
}

impl<'p> Eval<'p> {
    pub fn new(params: &'p [Tensor]) -> Self {
        Self { params, cache: vec![None; params.len()] }
    }
}

impl Graph for Eval<'_> {
    type Var = Rc<Tensor>;

    fn param(&mut self, id: ParamId) -> Rc<Tensor> {
        self.cache[id.0].get_or_insert_with(|| Rc::new(self.params[id.0].clone())).clone()
    }

    fn constant(&mut self, t: Tensor) -> Rc<Tensor> {
        Rc::new(t)
    }

    fn value<'a>(&'a self, v: &'a Rc<Tensor>) -> &'a Tensor {
        v
    }

    fn apply(&mut self, op: Prim, inputs: &[&Rc<Tensor>]) -> Result<Rc<Tensor>, DiffError> {
        let values: Vec<&Tensor> = inputs.iter().map(|t| t.as_ref()).collect();
        prim::forward(&op, &values).map(Rc::new)
    }
}
