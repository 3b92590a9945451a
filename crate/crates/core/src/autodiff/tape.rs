use super::ops::{self, Op};
use crate::array::Array;
use crate::error::AutodiffError;

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// One recorded value in the computation graph.
#[derive(Clone, Debug)]
pub struct DiffNode {
    pub id: usize,
    pub value: Array,
    pub grad: Array,
    pub op: Op,
    pub parents: Vec<usize>,
    pub requires_grad: bool,
}

/// Append-only Wengert list. Insertion order is a topological order, so a
/// reverse sweep over indices visits every child before its parents.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<DiffNode>,
    clamped: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &DiffNode {
        &self.nodes[v.0]
    }

    pub fn nodes(&self) -> &[DiffNode] {
        &self.nodes
    }

    /// Total number of entries that hit the log floor since the tape was created.
    pub fn clamp_events(&self) -> usize {
        self.clamped
    }

    fn push(&mut self, value: Array, op: Op, parents: Vec<usize>, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        let grad = Array::zeros(value.shape());
        self.nodes.push(DiffNode {
            id,
            value,
            grad,
            op,
            parents,
            requires_grad,
        });
        Var(id)
    }

    /// A trainable input. Gradients accumulate into it on `backward`.
    pub fn leaf(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, Vec::new(), true)
    }

    /// A frozen input. It never receives gradient.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Constant, Vec::new(), false)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Array::scalar(v))
    }

    /// Record `op` applied to `inputs`, computing its forward value.
    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var, AutodiffError> {
        if matches!(op, Op::Leaf | Op::Constant) {
            return Err(AutodiffError::Arity {
                op: op.name(),
                expected: 0,
                got: inputs.len(),
            });
        }
        let values: Vec<&Array> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
        let fwd = ops::forward(&op, &values)?;
        self.clamped += fwd.clamped;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(
            fwd.value,
            op,
            inputs.iter().map(|v| v.0).collect(),
            requires_grad,
        ))
    }

    fn op(&mut self, op: Op, inputs: &[Var]) -> Var {
        match self.apply(op, inputs) {
            Ok(v) => v,
            Err(e) => panic!("{e}"),
        }
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Detached copy of the accumulated gradient.
    pub fn grad_of(&self, v: Var) -> Array {
        self.nodes[v.0].grad.clone()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad.fill(0.0);
        }
    }

    fn sweep(&self, root: Var) -> Result<Vec<Option<Array>>, AutodiffError> {
        let root_val = &self.nodes[root.0].value;
        if !root_val.is_scalar() {
            return Err(AutodiffError::NonScalarRoot {
                shape: root_val.shape().to_vec(),
            });
        }
        let mut adj: Vec<Option<Array>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Array::ones(root_val.shape()));
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad && !node.parents.is_empty() {
                let inputs: Vec<&Array> =
                    node.parents.iter().map(|&p| &self.nodes[p].value).collect();
                let grads = ops::backward(&node.op, &inputs, &node.value, &g);
                for (&p, gp) in node.parents.iter().zip(grads) {
                    if !self.nodes[p].requires_grad {
                        continue;
                    }
                    match &mut adj[p] {
                        Some(acc) => acc.add_assign(&gp),
                        slot => *slot = Some(gp),
                    }
                }
            }
            adj[i] = Some(g);
        }
        Ok(adj)
    }

    /// Reverse sweep from a scalar `root`; every reachable node's `grad`
    /// gains `d root / d node`. Calling twice without [`Tape::zero_grad`]
    /// doubles every gradient.
    pub fn backward(&mut self, root: Var) -> Result<(), AutodiffError> {
        let adj = self.sweep(root)?;
        for (node, a) in self.nodes.iter_mut().zip(adj) {
            if let Some(a) = a {
                if node.requires_grad {
                    node.grad.add_assign(&a);
                }
            }
        }
        Ok(())
    }

    /// Gradients of `root` with respect to `wrt` without touching stored grads.
    pub fn gradients(&self, root: Var, wrt: &[Var]) -> Result<Vec<Array>, AutodiffError> {
        let adj = self.sweep(root)?;
        Ok(wrt
            .iter()
            .map(|v| {
                adj.get(v.0)
                    .and_then(|a| a.clone())
                    .filter(|_| self.nodes[v.0].requires_grad)
                    .unwrap_or_else(|| Array::zeros(self.shape(*v)))
            })
            .collect())
    }

    /// Recompute every non-leaf value from its parents and report the first
    /// node whose stored value differs in any bit.
    pub fn replay(&self) -> Result<(), usize> {
        for n in &self.nodes {
            if n.parents.is_empty() {
                continue;
            }
            let inputs: Vec<&Array> = n.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let fwd = ops::forward(&n.op, &inputs).map_err(|_| n.id)?;
            let same = fwd.value.shape() == n.value.shape()
                && fwd
                    .value
                    .data()
                    .iter()
                    .zip(n.value.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(n.id);
            }
        }
        Ok(())
    }

    // Infallible helpers used by model code. They panic with the same
    // diagnostic `apply` would return; shapes in model code are static.

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.op(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.op(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.op(Op::Mul, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.op(Op::Matmul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.op(Op::Scale(c), &[a])
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        self.op(Op::Offset(c), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.op(Op::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.op(Op::Log, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.op(Op::Tanh, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.op(Op::Relu, &[a])
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.op(Op::Sqrt, &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        self.op(Op::Softmax, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.op(Op::Sum, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        self.op(Op::Mean, &[a])
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        self.op(Op::MeanRows, &[a])
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        self.op(Op::Slice { axis, start, len }, &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Var {
        self.op(Op::Concat { axis }, parts)
    }

    pub fn l2_norm(&mut self, a: Var) -> Var {
        self.op(Op::L2Norm, &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        self.op(Op::Transpose, &[a])
    }

    pub fn repeat_rows(&mut self, a: Var, n: usize) -> Var {
        self.op(Op::RepeatRows(n), &[a])
    }

    pub fn layer_norm(&mut self, a: Var) -> Var {
        self.op(Op::LayerNorm, &[a])
    }

    pub fn straight_through(&mut self, a: Var) -> Var {
        self.op(Op::StraightThrough, &[a])
    }

    /// `x W + b` for `x: [L, n]`, `W: [n, m]`, `b: [1, m]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Var {
        let rows = self.shape(x)[0];
        let xw = self.matmul(x, w);
        let bb = if rows == 1 {
            b
        } else {
            self.repeat_rows(b, rows)
        };
        self.add(xw, bb)
    }

    /// Sum of `values` as a scalar node.
    pub fn add_all(&mut self, values: &[Var]) -> Var {
        let mut acc = values[0];
        for &v in &values[1..] {
            acc = self.add(acc, v);
        }
        acc
    }
}
