//! Reverse-mode differentiation over a linear tape of primitive operations.
//!
//! Nodes are appended in evaluation order, so the tape is always a DAG in
//! topological order and the backward pass is a single reverse sweep.

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Primitive operations. Concatenation and slicing act on the last axis.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    MatMul,
    Concat,
    Slice { start: usize, len: usize },
    Sigmoid,
    Tanh,
    Scale(f64),
    Sum,
    /// Maximum over a list of scalars; the gradient goes to the lowest-index argmax.
    Max,
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::MatMul => "matmul",
            OpKind::Concat => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Scale(_) => "scale",
            OpKind::Sum => "sum",
            OpKind::Max => "max",
        }
    }
}

#[derive(Debug)]
enum Origin {
    Constant,
    Leaf,
    Param(String),
    Op(OpKind, Vec<Var>),
}

#[derive(Debug)]
struct Node {
    origin: Origin,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints of every node with respect to one scalar output.
#[derive(Debug)]
pub struct Adjoints {
    adj: Vec<Option<Vec<f64>>>,
}

impl Adjoints {
    /// Gradient of the output with respect to `v`, or `None` if `v` does
    /// not influence the output.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.adj.get(v.0).and_then(|a| a.as_deref())
    }
}

fn shape_pair(a: &Tensor, b: &Tensor) -> String {
    format!("{:?} vs {:?}", a.shape(), b.shape())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `a` (r x k) times `b` (k x c), row-major.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = &mut out[i * c..(i + 1) * c];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * c..(p + 1) * c];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

fn elementwise(a: &Tensor, b: &Tensor, kind: &OpKind, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape(kind.name(), shape_pair(a, b)));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Forward value of one primitive. Pure; does not touch any tape.
pub fn primitive_forward(kind: &OpKind, inputs: &[&Tensor]) -> Result<Tensor> {
    let arity = |n: usize| -> Result<()> {
        if inputs.len() != n {
            Err(Error::shape(kind.name(), format!("expected {n} inputs, got {}", inputs.len())))
        } else {
            Ok(())
        }
    };
    match kind {
        OpKind::Add => {
            arity(2)?;
            elementwise(inputs[0], inputs[1], kind, |x, y| x + y)
        }
        OpKind::Sub => {
            arity(2)?;
            elementwise(inputs[0], inputs[1], kind, |x, y| x - y)
        }
        OpKind::Mul => {
            arity(2)?;
            elementwise(inputs[0], inputs[1], kind, |x, y| x * y)
        }
        OpKind::MatMul => {
            arity(2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.rank() != 2 || !(b.rank() == 1 || b.rank() == 2) {
                return Err(Error::shape("matmul", shape_pair(a, b)));
            }
            let (r, k) = (a.shape()[0], a.shape()[1]);
            let (k2, c) = if b.rank() == 1 { (b.shape()[0], 1) } else { (b.shape()[0], b.shape()[1]) };
            if k != k2 {
                return Err(Error::shape("matmul", format!("inner dims differ: {}", shape_pair(a, b))));
            }
            let data = matmul_raw(a.data(), b.data(), r, k, c);
            if b.rank() == 1 {
                Tensor::new(vec![r], data)
            } else {
                Tensor::new(vec![r, c], data)
            }
        }
        OpKind::Concat => {
            if inputs.is_empty() {
                return Err(Error::shape("concat", "no inputs"));
            }
            let rank = inputs[0].rank();
            let outer = inputs[0].outer();
            if rank == 0 || rank > 2 {
                return Err(Error::shape("concat", format!("unsupported rank {rank}")));
            }
            for t in inputs {
                if t.rank() != rank || t.outer() != outer {
                    return Err(Error::shape("concat", shape_pair(inputs[0], t)));
                }
            }
            let width: usize = inputs.iter().map(|t| t.inner()).sum();
            let mut data = Vec::with_capacity(outer * width);
            for row in 0..outer {
                for t in inputs {
                    let w = t.inner();
                    data.extend_from_slice(&t.data()[row * w..(row + 1) * w]);
                }
            }
            let shape = if rank == 1 { vec![width] } else { vec![outer, width] };
            Tensor::new(shape, data)
        }
        OpKind::Slice { start, len } => {
            arity(1)?;
            let a = inputs[0];
            if a.rank() == 0 || a.rank() > 2 || start + len > a.inner() {
                return Err(Error::shape(
                    "slice",
                    format!("[{start}, {}) out of range for {:?}", start + len, a.shape()),
                ));
            }
            let w = a.inner();
            let outer = a.outer();
            let mut data = Vec::with_capacity(outer * len);
            for row in 0..outer {
                data.extend_from_slice(&a.data()[row * w + start..row * w + start + len]);
            }
            let shape = if a.rank() == 1 { vec![*len] } else { vec![outer, *len] };
            Tensor::new(shape, data)
        }
        OpKind::Sigmoid => {
            arity(1)?;
            Tensor::new(inputs[0].shape().to_vec(), inputs[0].data().iter().map(|x| sigmoid(*x)).collect())
        }
        OpKind::Tanh => {
            arity(1)?;
            Tensor::new(inputs[0].shape().to_vec(), inputs[0].data().iter().map(|x| x.tanh()).collect())
        }
        OpKind::Scale(c) => {
            arity(1)?;
            Tensor::new(inputs[0].shape().to_vec(), inputs[0].data().iter().map(|x| c * x).collect())
        }
        OpKind::Sum => {
            arity(1)?;
            Ok(Tensor::scalar(inputs[0].data().iter().sum()))
        }
        OpKind::Max => {
            if inputs.is_empty() {
                return Err(Error::shape("max", "no inputs"));
            }
            let mut best = f64::NEG_INFINITY;
            for t in inputs {
                let v = t.item().map_err(|_| Error::shape("max", format!("non-scalar input {:?}", t.shape())))?;
                if v > best {
                    best = v;
                }
            }
            Ok(Tensor::scalar(best))
        }
    }
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

    fn push(&mut self, origin: Origin, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            origin,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Origin::Constant, value, false)
    }

    /// A differentiable input not tied to a [`ParamStore`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Origin::Leaf, value, true)
    }

    /// A differentiable leaf bound to a named parameter; `backward` routes
    /// its gradient into the store's accumulator.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store.value(name)?.clone();
        Ok(self.push(Origin::Param(name.to_owned()), value, true))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let value = {
            let vals: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            primitive_forward(&kind, &vals)?
        };
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(Origin::Op(kind, inputs.to_vec()), value, requires_grad))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(OpKind::Concat, parts)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.apply(OpKind::Slice { start, len }, &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Tanh, &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(OpKind::Scale(c), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(OpKind::Sum, &[a])
    }

    pub fn max(&mut self, items: &[Var]) -> Result<Var> {
        self.apply(OpKind::Max, items)
    }

    /// Reverse sweep from a scalar output.
    pub fn adjoints(&self, out: Var) -> Result<Adjoints> {
        let out_val = &self.nodes[out.0].value;
        if !out_val.is_scalar() {
            return Err(Error::shape("backward", format!("output must be scalar, got {:?}", out_val.shape())));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        adj[out.0] = Some(vec![1.0]);

        for id in (0..=out.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Origin::Op(kind, inputs) = &node.origin else {
                continue;
            };
            let Some(g) = adj[id].take() else {
                continue;
            };
            self.propagate(kind, inputs, &node.value, &g, &mut adj);
            adj[id] = Some(g);
        }
        Ok(Adjoints { adj })
    }

    fn propagate(&self, kind: &OpKind, inputs: &[Var], out: &Tensor, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, delta: &mut dyn FnMut(&mut [f64])| {
            let len = self.nodes[v.0].value.len();
            let slot = adj[v.0].get_or_insert_with(|| vec![0.0; len]);
            delta(slot);
        };
        match kind {
            OpKind::Add | OpKind::Sub => {
                let sign = if *kind == OpKind::Add { 1.0 } else { -1.0 };
                if wants(inputs[0]) {
                    acc(inputs[0], &mut |s| s.iter_mut().zip(g).for_each(|(a, d)| *a += d));
                }
                if wants(inputs[1]) {
                    acc(inputs[1], &mut |s| s.iter_mut().zip(g).for_each(|(a, d)| *a += sign * d));
                }
            }
            OpKind::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                if wants(a) {
                    let bv = self.nodes[b.0].value.data();
                    acc(a, &mut |s| {
                        for ((x, d), y) in s.iter_mut().zip(g).zip(bv) {
                            *x += d * y;
                        }
                    });
                }
                if wants(b) {
                    let av = self.nodes[a.0].value.data();
                    acc(b, &mut |s| {
                        for ((x, d), y) in s.iter_mut().zip(g).zip(av) {
                            *x += d * y;
                        }
                    });
                }
            }
            OpKind::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                let at = &self.nodes[a.0].value;
                let bt = &self.nodes[b.0].value;
                let (r, k) = (at.shape()[0], at.shape()[1]);
                let c = if bt.rank() == 1 { 1 } else { bt.shape()[1] };
                if wants(a) {
                    // dA = G B^T
                    let bd = bt.data();
                    acc(a, &mut |s| {
                        for i in 0..r {
                            let grow = &g[i * c..(i + 1) * c];
                            for p in 0..k {
                                let brow = &bd[p * c..(p + 1) * c];
                                let dot: f64 = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                                s[i * k + p] += dot;
                            }
                        }
                    });
                }
                if wants(b) {
                    // dB = A^T G
                    let ad = at.data();
                    acc(b, &mut |s| {
                        for i in 0..r {
                            let grow = &g[i * c..(i + 1) * c];
                            for p in 0..k {
                                let aip = ad[i * k + p];
                                if aip == 0.0 {
                                    continue;
                                }
                                let srow = &mut s[p * c..(p + 1) * c];
                                for (x, d) in srow.iter_mut().zip(grow) {
                                    *x += aip * d;
                                }
                            }
                        }
                    });
                }
            }
            OpKind::Concat => {
                let width = out.inner();
                let outer = out.outer();
                let mut offset = 0;
                for &v in inputs {
                    let w = self.nodes[v.0].value.inner();
                    if wants(v) {
                        acc(v, &mut |s| {
                            for row in 0..outer {
                                for j in 0..w {
                                    s[row * w + j] += g[row * width + offset + j];
                                }
                            }
                        });
                    }
                    offset += w;
                }
            }
            OpKind::Slice { start, len } => {
                let v = inputs[0];
                if wants(v) {
                    let w = self.nodes[v.0].value.inner();
                    let outer = out.outer();
                    acc(v, &mut |s| {
                        for row in 0..outer {
                            for j in 0..*len {
                                s[row * w + start + j] += g[row * len + j];
                            }
                        }
                    });
                }
            }
            OpKind::Sigmoid => {
                let y = out.data();
                if wants(inputs[0]) {
                    acc(inputs[0], &mut |s| {
                        for ((x, d), yv) in s.iter_mut().zip(g).zip(y) {
                            *x += d * yv * (1.0 - yv);
                        }
                    });
                }
            }
            OpKind::Tanh => {
                let y = out.data();
                if wants(inputs[0]) {
                    acc(inputs[0], &mut |s| {
                        for ((x, d), yv) in s.iter_mut().zip(g).zip(y) {
                            *x += d * (1.0 - yv * yv);
                        }
                    });
                }
            }
            OpKind::Scale(c) => {
                if wants(inputs[0]) {
                    acc(inputs[0], &mut |s| s.iter_mut().zip(g).for_each(|(x, d)| *x += c * d));
                }
            }
            OpKind::Sum => {
                if wants(inputs[0]) {
                    let d = g[0];
                    acc(inputs[0], &mut |s| s.iter_mut().for_each(|x| *x += d));
                }
            }
            OpKind::Max => {
                let mut best = 0;
                let mut best_val = f64::NEG_INFINITY;
                for (i, v) in inputs.iter().enumerate() {
                    let val = self.nodes[v.0].value.data()[0];
                    if val > best_val {
                        best_val = val;
                        best = i;
                    }
                }
                let v = inputs[best];
                if wants(v) {
                    let d = g[0];
                    acc(v, &mut |s| s[0] += d);
                }
            }
        }
    }

    /// Backpropagates from a scalar output and adds the gradient of every
    /// parameter leaf into `store`. Repeated calls accumulate.
    pub fn backward(&self, out: Var, store: &mut ParamStore) -> Result<()> {
        let adj = self.adjoints(out)?;
        for (id, node) in self.nodes.iter().enumerate().take(out.0 + 1) {
            if let Origin::Param(name) = &node.origin {
                if let Some(g) = adj.get(Var(id)) {
                    store.accumulate(name, g)?;
                }
            }
        }
        Ok(())
    }
}
