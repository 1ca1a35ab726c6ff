use super::params::{Gradients, ParamId, ParameterSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input { slot: usize },
    Param(ParamId),
    Const(Tensor),
    /// `W x` with `W` a `p x q` matrix node.
    MatVec { w: NodeId, x: NodeId },
    /// `W x + b`.
    Affine { w: NodeId, x: NodeId, b: NodeId },
    Silu(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    Dot(NodeId, NodeId),
    Norm(NodeId),
    Cosine(NodeId, NodeId),
    Concat(Vec<NodeId>),
    /// Row `row` of a matrix node (timestep-embedding lookup).
    GatherRow { table: NodeId, row: usize },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Param(_) => "param",
            Op::Const(_) => "const",
            Op::MatVec { .. } => "matvec",
            Op::Affine { .. } => "affine",
            Op::Silu(_) => "silu",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::Dot(..) => "dot",
            Op::Norm(_) => "norm",
            Op::Cosine(..) => "cosine",
            Op::Concat(_) => "concat",
            Op::GatherRow { .. } => "gather",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// A define-then-run computation graph over dense f64 vectors and matrices.
///
/// Nodes can only reference earlier nodes, so insertion order is a
/// topological order and the graph is acyclic by construction. `forward`
/// evaluates every node; `backward` propagates an output adjoint to the
/// trainable parameters and to the graph inputs.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    input_shapes: Vec<Vec<usize>>,
    param_shapes: Vec<(ParamId, Vec<usize>)>,
    values: Vec<Vec<f64>>,
    evaluated: bool,
}

pub(crate) fn matvec_into(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[i * cols..(i + 1) * cols];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x) {
            acc += a * b;
        }
        *o = acc;
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
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

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        self.evaluated = false;
        self.nodes.push(Node { op, shape });
        NodeId(self.nodes.len() - 1)
    }

    fn vec_len(&self, id: NodeId) -> Result<usize> {
        match self.shape(id) {
            [n] => Ok(*n),
            s => Err(Error::Shape(format!("node {} is not a vector (shape {s:?})", id.0))),
        }
    }

    fn same_vec(&self, a: NodeId, b: NodeId, op: &str) -> Result<usize> {
        let (na, nb) = (self.vec_len(a)?, self.vec_len(b)?);
        if na != nb {
            return Err(Error::Shape(format!("{op}: lengths {na} and {nb} differ")));
        }
        Ok(na)
    }

    /// Declares a runtime input vector; inputs are bound in declaration order.
    pub fn input(&mut self, len: usize) -> NodeId {
        let slot = self.input_shapes.len();
        self.input_shapes.push(vec![len]);
        self.push(Op::Input { slot }, vec![len])
    }

    /// References a parameter; its shape is pinned at build time.
    pub fn param(&mut self, params: &ParameterSet, name: &str) -> Result<NodeId> {
        let id = params.id(name)?;
        let shape = params.tensor(id).shape().to_vec();
        self.param_shapes.push((id, shape.clone()));
        Ok(self.push(Op::Param(id), shape))
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let shape = t.shape().to_vec();
        self.push(Op::Const(t), shape)
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (p, q) = match self.shape(w) {
            [p, q] => (*p, *q),
            s => return Err(Error::Shape(format!("matvec: weight has shape {s:?}"))),
        };
        let n = self.vec_len(x)?;
        if n != q {
            return Err(Error::Shape(format!("matvec: weight is {p}x{q}, input has length {n}")));
        }
        Ok(self.push(Op::MatVec { w, x }, vec![p]))
    }

    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (p, q) = match self.shape(w) {
            [p, q] => (*p, *q),
            s => return Err(Error::Shape(format!("affine: weight has shape {s:?}"))),
        };
        let n = self.vec_len(x)?;
        let nb = self.vec_len(b)?;
        if n != q || nb != p {
            return Err(Error::Shape(format!(
                "affine: weight is {p}x{q}, input has length {n}, bias has length {nb}"
            )));
        }
        Ok(self.push(Op::Affine { w, x, b }, vec![p]))
    }

    pub fn silu(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.vec_len(x)?;
        Ok(self.push(Op::Silu(x), vec![n]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let n = self.same_vec(a, b, "add")?;
        Ok(self.push(Op::Add(a, b), vec![n]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let n = self.same_vec(a, b, "sub")?;
        Ok(self.push(Op::Sub(a, b), vec![n]))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let n = self.vec_len(a)?;
        Ok(self.push(Op::Scale(a, c), vec![n]))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_vec(a, b, "dot")?;
        Ok(self.push(Op::Dot(a, b), vec![1]))
    }

    pub fn norm(&mut self, a: NodeId) -> Result<NodeId> {
        self.vec_len(a)?;
        Ok(self.push(Op::Norm(a), vec![1]))
    }

    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_vec(a, b, "cosine")?;
        Ok(self.push(Op::Cosine(a, b), vec![1]))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut n = 0;
        for p in parts {
            n += self.vec_len(*p)?;
        }
        Ok(self.push(Op::Concat(parts.to_vec()), vec![n]))
    }

    pub fn gather_row(&mut self, table: NodeId, row: usize) -> Result<NodeId> {
        let (r, c) = match self.shape(table) {
            [r, c] => (*r, *c),
            s => return Err(Error::Shape(format!("gather: table has shape {s:?}"))),
        };
        if row >= r {
            return Err(Error::Shape(format!("gather: row {row} out of {r}")));
        }
        Ok(self.push(Op::GatherRow { table, row }, vec![c]))
    }

    /// Adds a scalar constant to a scalar node.
    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let k = self.constant(Tensor::scalar(c));
        self.add(a, k)
    }

    /// Evaluates every node. The same inputs and parameters always produce
    /// bit-identical values.
    pub fn forward(&mut self, inputs: &[&[f64]], params: &ParameterSet) -> Result<()> {
        self.evaluated = false;
        if inputs.len() != self.input_shapes.len() {
            return Err(Error::Shape(format!(
                "graph expects {} inputs, got {}",
                self.input_shapes.len(),
                inputs.len()
            )));
        }
        for (slot, (x, shape)) in inputs.iter().zip(&self.input_shapes).enumerate() {
            if x.len() != shape[0] {
                return Err(Error::Shape(format!(
                    "input {slot} expects length {}, got {}",
                    shape[0],
                    x.len()
                )));
            }
        }
        for (id, shape) in &self.param_shapes {
            if id.0 >= params.len() || params.tensor(*id).shape() != shape.as_slice() {
                return Err(Error::Shape(format!("parameter {} changed shape since graph build", id.0)));
            }
        }

        if self.values.len() != self.nodes.len() {
            self.values = self
                .nodes
                .iter()
                .map(|n| vec![0.0; n.shape.iter().product()])
                .collect();
        }

        for i in 0..self.nodes.len() {
            let (done, rest) = self.values.split_at_mut(i);
            let out = &mut rest[0];
            let v = |id: &NodeId| -> &[f64] { &done[id.0] };
            match &self.nodes[i].op {
                Op::Input { slot } => out.copy_from_slice(inputs[*slot]),
                Op::Param(id) => out.copy_from_slice(params.tensor(*id).data()),
                Op::Const(t) => out.copy_from_slice(t.data()),
                Op::MatVec { w, x } => {
                    let (p, q) = (self.nodes[w.0].shape[0], self.nodes[w.0].shape[1]);
                    matvec_into(v(w), p, q, v(x), out);
                }
                Op::Affine { w, x, b } => {
                    let (p, q) = (self.nodes[w.0].shape[0], self.nodes[w.0].shape[1]);
                    matvec_into(v(w), p, q, v(x), out);
                    for (o, bi) in out.iter_mut().zip(v(b)) {
                        *o += bi;
                    }
                }
                Op::Silu(x) => {
                    for (o, xi) in out.iter_mut().zip(v(x)) {
                        *o = xi * sigmoid(*xi);
                    }
                }
                Op::Add(a, b) => {
                    for ((o, x), y) in out.iter_mut().zip(v(a)).zip(v(b)) {
                        *o = x + y;
                    }
                }
                Op::Sub(a, b) => {
                    for ((o, x), y) in out.iter_mut().zip(v(a)).zip(v(b)) {
                        *o = x - y;
                    }
                }
                Op::Scale(a, c) => {
                    for (o, x) in out.iter_mut().zip(v(a)) {
                        *o = c * x;
                    }
                }
                Op::Dot(a, b) => out[0] = dot(v(a), v(b)),
                Op::Norm(a) => out[0] = norm(v(a)),
                Op::Cosine(a, b) => {
                    let (x, y) = (v(a), v(b));
                    out[0] = dot(x, y) / (norm(x) * norm(y));
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let src = v(p);
                        out[off..off + src.len()].copy_from_slice(src);
                        off += src.len();
                    }
                }
                Op::GatherRow { table, row } => {
                    let c = self.nodes[table.0].shape[1];
                    out.copy_from_slice(&v(table)[row * c..(row + 1) * c]);
                }
            }
            if out.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteNode {
                    node: i,
                    op: self.nodes[i].op.name(),
                });
            }
        }
        self.evaluated = true;
        Ok(())
    }

    pub fn value(&self, id: NodeId) -> Result<&[f64]> {
        if !self.evaluated {
            return Err(Error::BackwardBeforeForward);
        }
        Ok(&self.values[id.0])
    }

    /// Value of a scalar node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        Ok(self.value(id)?[0])
    }

    /// Which nodes carry a derivative back to a trainable parameter or input.
    fn needs_grad(&self, params: &ParameterSet) -> Vec<bool> {
        let mut need = vec![false; self.nodes.len()];
        for (i, n) in self.nodes.iter().enumerate() {
            need[i] = match &n.op {
                Op::Input { .. } => true,
                Op::Param(id) => params.is_trainable(*id),
                Op::Const(_) => false,
                Op::MatVec { w, x } => need[w.0] || need[x.0],
                Op::Affine { w, x, b } => need[w.0] || need[x.0] || need[b.0],
                Op::Silu(a) | Op::Scale(a, _) | Op::Norm(a) => need[a.0],
                Op::Add(a, b) | Op::Sub(a, b) | Op::Dot(a, b) | Op::Cosine(a, b) => need[a.0] || need[b.0],
                Op::Concat(parts) => parts.iter().any(|p| need[p.0]),
                Op::GatherRow { table, .. } => need[table.0],
            };
        }
        need
    }

    /// Reverse-mode sweep seeded with `output_adjoint` at `output`.
    pub fn backward(&self, output: NodeId, output_adjoint: &[f64], params: &ParameterSet) -> Result<Gradients> {
        if !self.evaluated {
            return Err(Error::BackwardBeforeForward);
        }
        let out_len: usize = self.nodes[output.0].shape.iter().product();
        if output_adjoint.len() != out_len {
            return Err(Error::Shape(format!(
                "output adjoint has length {}, node has {out_len}",
                output_adjoint.len()
            )));
        }
        let need = self.needs_grad(params);
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[output.0] = Some(output_adjoint.to_vec());

        let mut grads = Gradients::zeros_like(params);
        grads.inputs = self.input_shapes.iter().map(|s| Tensor::zeros(s.clone())).collect();

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let vals = &self.values;
            let mut acc = |id: NodeId, f: &mut dyn FnMut(&mut [f64])| {
                if !need[id.0] {
                    return;
                }
                // Each consumer's contribution is formed in full before it is
                // added, so with two consumers the sum is order-independent.
                let n: usize = self.nodes[id.0].shape.iter().product();
                let mut contrib = vec![0.0; n];
                f(&mut contrib);
                match &mut adj[id.0] {
                    Some(buf) => {
                        for (a, c) in buf.iter_mut().zip(&contrib) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &self.nodes[i].op {
                Op::Input { slot } => {
                    for (a, b) in grads.inputs[*slot].data_mut().iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::Param(id) => {
                    if params.is_trainable(*id) {
                        for (a, b) in grads.params[id.0].data_mut().iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                }
                Op::Const(_) => {}
                Op::MatVec { w, x } | Op::Affine { w, x, .. } => {
                    let (p, q) = (self.nodes[w.0].shape[0], self.nodes[w.0].shape[1]);
                    let wv = &vals[w.0];
                    let xv = &vals[x.0];
                    acc(*w, &mut |buf| {
                        for r in 0..p {
                            let gr = g[r];
                            for (c, xc) in buf[r * q..(r + 1) * q].iter_mut().zip(xv) {
                                *c += gr * xc;
                            }
                        }
                    });
                    acc(*x, &mut |buf| {
                        for r in 0..p {
                            let gr = g[r];
                            for (c, wc) in buf.iter_mut().zip(&wv[r * q..(r + 1) * q]) {
                                *c += gr * wc;
                            }
                        }
                    });
                    if let Op::Affine { b, .. } = &self.nodes[i].op {
                        acc(*b, &mut |buf| {
                            for (c, gr) in buf.iter_mut().zip(&g) {
                                *c += gr;
                            }
                        });
                    }
                }
                Op::Silu(a) => {
                    let xv = &vals[a.0];
                    acc(*a, &mut |buf| {
                        for ((c, x), gi) in buf.iter_mut().zip(xv).zip(&g) {
                            let s = sigmoid(*x);
                            *c += gi * s * (1.0 + x * (1.0 - s));
                        }
                    });
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sign = if matches!(self.nodes[i].op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    acc(*a, &mut |buf| {
                        for (c, gi) in buf.iter_mut().zip(&g) {
                            *c += gi;
                        }
                    });
                    acc(*b, &mut |buf| {
                        for (c, gi) in buf.iter_mut().zip(&g) {
                            *c += sign * gi;
                        }
                    });
                }
                Op::Scale(a, k) => {
                    acc(*a, &mut |buf| {
                        for (c, gi) in buf.iter_mut().zip(&g) {
                            *c += k * gi;
                        }
                    });
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (&vals[a.0], &vals[b.0]);
                    acc(*a, &mut |buf| {
                        for (c, y) in buf.iter_mut().zip(bv) {
                            *c += g[0] * y;
                        }
                    });
                    acc(*b, &mut |buf| {
                        for (c, x) in buf.iter_mut().zip(av) {
                            *c += g[0] * x;
                        }
                    });
                }
                Op::Norm(a) => {
                    let av = &vals[a.0];
                    let n = norm(av);
                    // Zero subgradient at the origin.
                    if n > 0.0 {
                        acc(*a, &mut |buf| {
                            for (c, x) in buf.iter_mut().zip(av) {
                                *c += g[0] * x / n;
                            }
                        });
                    }
                }
                Op::Cosine(a, b) => {
                    let (av, bv) = (&vals[a.0], &vals[b.0]);
                    let (na, nb) = (norm(av), norm(bv));
                    let cos = vals[i][0];
                    acc(*a, &mut |buf| {
                        for ((c, x), y) in buf.iter_mut().zip(av).zip(bv) {
                            *c += g[0] * (y / (na * nb) - cos * x / (na * na));
                        }
                    });
                    acc(*b, &mut |buf| {
                        for ((c, x), y) in buf.iter_mut().zip(av).zip(bv) {
                            *c += g[0] * (x / (na * nb) - cos * y / (nb * nb));
                        }
                    });
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].shape[0];
                        let seg = &g[off..off + n];
                        acc(*p, &mut |buf| {
                            for (c, gi) in buf.iter_mut().zip(seg) {
                                *c += gi;
                            }
                        });
                        off += n;
                    }
                }
                Op::GatherRow { table, row } => {
                    let c = self.nodes[table.0].shape[1];
                    acc(*table, &mut |buf| {
                        for (d, gi) in buf[row * c..(row + 1) * c].iter_mut().zip(&g) {
                            *d += gi;
                        }
                    });
                }
            }
        }
        Ok(grads)
    }

    /// Backward from a scalar node with unit adjoint.
    pub fn backward_scalar(&self, output: NodeId, params: &ParameterSet) -> Result<Gradients> {
        self.backward(output, &[1.0], params)
    }
}
