use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;

use super::{axis_extents, gemm, multiply_counter, Tensor};
use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softplus(usize),
    Sum(usize),
    SumAxis(usize, usize),
    Softmax(usize, usize),
    Concat(Vec<usize>, usize),
    Reshape(usize),
    Narrow {
        input: usize,
        axis: usize,
        start: usize,
    },
    GatherRows(usize, Vec<usize>),
    ScatterAddRows(usize, Vec<usize>),
    BatchMatVec(usize, usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::BatchMatVec(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Softplus(a)
            | Op::Sum(a)
            | Op::SumAxis(a, _)
            | Op::Softmax(a, _)
            | Op::Reshape(a)
            | Op::GatherRows(a, _)
            | Op::ScatterAddRows(a, _) => vec![*a],
            Op::Narrow { input, .. } => vec![*input],
            Op::Concat(xs, _) => xs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run recording of differentiable operations.
///
/// Nodes are appended in evaluation order, so the node list is always a
/// topological order of the computation. A tape is single-threaded.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.nodes.borrow().len())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{}, shape {:?})", self.id, self.shape())
    }
}

/// Gradients of a scalar loss with respect to every `requires_grad` leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_leaf: BTreeMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.by_leaf.get(&var.id)
    }

    pub fn get_id(&self, id: usize) -> Option<&Tensor> {
        self.by_leaf.get(&id)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Records a leaf; it participates in backward iff `tensor.requires_grad`.
    pub fn leaf(&self, tensor: &Tensor) -> Var<'_> {
        let mut value = tensor.clone();
        value.grad = None;
        let requires_grad = value.requires_grad;
        self.push_node(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, tensor: Tensor) -> Var<'_> {
        let mut value = tensor;
        value.requires_grad = false;
        value.grad = None;
        self.push_node(value, Op::Leaf, false)
    }

    pub fn param(&self, tensor: &Tensor) -> Var<'_> {
        let mut value = tensor.clone();
        value.requires_grad = true;
        value.grad = None;
        self.push_node(value, Op::Leaf, true)
    }

    fn push_node(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Tensor, op: Op, name: &'static str) -> Result<Var<'_>> {
        let value = value.check_finite(name)?;
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        Ok(self.push_node(value, op, requires_grad))
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        let nodes = self.nodes.borrow();
        f(&nodes[id].value)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat<'t>(&'t self, xs: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        if xs.is_empty() {
            return dim_err("concat of zero tensors");
        }
        let value = {
            let nodes = self.nodes.borrow();
            let first = &nodes[xs[0].id].value;
            let rank = first.ndim();
            if axis >= rank {
                return dim_err(format!(
                    "concat axis {axis} out of range for rank {rank}"
                ));
            }
            let mut shape = first.shape().to_vec();
            shape[axis] = 0;
            for x in xs {
                let s = nodes[x.id].value.shape();
                if s.len() != rank
                    || s.iter()
                        .zip(first.shape())
                        .enumerate()
                        .any(|(k, (a, b))| k != axis && a != b)
                {
                    return dim_err(format!(
                        "concat shapes disagree off axis {axis}: {:?} vs {s:?}",
                        first.shape()
                    ));
                }
                shape[axis] += s[axis];
            }
            let (outer, _, inner) = axis_extents(&shape, axis)?;
            let mut data = Vec::with_capacity(shape.iter().product());
            for o in 0..outer {
                for x in xs {
                    let v = &nodes[x.id].value;
                    let chunk = v.shape()[axis] * inner;
                    data.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            Tensor::new(&shape, data)?
        };
        self.push(value, Op::Concat(xs.iter().map(|x| x.id).collect(), axis), "concat")
    }

    /// Reverse pass from a one-element `loss`.
    ///
    /// Every `requires_grad` leaf receives a gradient (zeros if the loss does
    /// not depend on it). The tape is cleared afterwards.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let mut nodes = self.nodes.borrow_mut();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        let mut out = Gradients::default();

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                if matches!(node.op, Op::Leaf) {
                    out.by_leaf.insert(id, Tensor::zeros(node.value.shape()));
                }
                continue;
            };
            if matches!(node.op, Op::Leaf) {
                out.by_leaf
                    .insert(id, Tensor::new(node.value.shape(), g)?);
                continue;
            }
            for (input, contribution) in backward_rule(&nodes, node, &g)? {
                if !nodes[input].requires_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contribution) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        // requires_grad leaves recorded after the loss are unreachable
        for (id, node) in nodes.iter().enumerate().skip(loss.id + 1) {
            if node.requires_grad && matches!(node.op, Op::Leaf) {
                out.by_leaf.insert(id, Tensor::zeros(node.value.shape()));
            }
        }
        nodes.clear();
        Ok(out)
    }
}

fn broadcast_sum(g: &[f64]) -> Vec<f64> {
    vec![g.iter().sum()]
}

/// Per-input gradient contributions of one node.
fn backward_rule(nodes: &[Node], node: &Node, g: &[f64]) -> Result<Vec<(usize, Vec<f64>)>> {
    let val = |i: usize| &nodes[i].value;
    let y = node.value.data();
    Ok(match &node.op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2()?;
            let (_, n) = val(*b).dims2()?;
            let mut out = Vec::new();
            if nodes[*a].requires_grad {
                out.push((*a, gemm(g, m, n, false, val(*b).data(), k, true)?));
            }
            if nodes[*b].requires_grad {
                out.push((*b, gemm(val(*a).data(), k, m, true, g, n, false)?));
            }
            out
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            let ga = if val(*a).len() == g.len() {
                g.to_vec()
            } else {
                broadcast_sum(g)
            };
            let mut gb: Vec<f64> = if val(*b).len() == g.len() {
                g.to_vec()
            } else {
                broadcast_sum(g)
            };
            gb.iter_mut().for_each(|v| *v *= sign);
            vec![(*a, ga), (*b, gb)]
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            let pick = |v: &[f64], i: usize| if v.len() == 1 { v[0] } else { v[i] };
            let prod_a: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * pick(bv, i)).collect();
            let prod_b: Vec<f64> = g.iter().enumerate().map(|(i, gi)| gi * pick(av, i)).collect();
            let ga = if av.len() == g.len() { prod_a } else { broadcast_sum(&prod_a) };
            let gb = if bv.len() == g.len() { prod_b } else { broadcast_sum(&prod_b) };
            vec![(*a, ga), (*b, gb)]
        }
        Op::AddRow(x, bias) => {
            let width = val(*bias).len();
            let mut gb = vec![0.0; width];
            for row in g.chunks(width) {
                for (acc, v) in gb.iter_mut().zip(row) {
                    *acc += v;
                }
            }
            vec![(*x, g.to_vec()), (*bias, gb)]
        }
        Op::Scale(x, c) => vec![(*x, g.iter().map(|v| v * c).collect())],
        Op::Sigmoid(x) => vec![(
            *x,
            g.iter().zip(y).map(|(gi, yi)| gi * yi * (1.0 - yi)).collect(),
        )],
        Op::Tanh(x) => vec![(
            *x,
            g.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect(),
        )],
        Op::Relu(x) => vec![(
            *x,
            g.iter()
                .zip(val(*x).data())
                .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                .collect(),
        )],
        Op::Softplus(x) => vec![(
            *x,
            g.iter()
                .zip(val(*x).data())
                .map(|(gi, xi)| gi * sigmoid(*xi))
                .collect(),
        )],
        Op::Sum(x) => vec![(*x, vec![g[0]; val(*x).len()])],
        Op::SumAxis(x, axis) => {
            let (outer, len, inner) = axis_extents(val(*x).shape(), *axis)?;
            let mut gx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for l in 0..len {
                    let dst = (o * len + l) * inner;
                    gx[dst..dst + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![(*x, gx)]
        }
        Op::Softmax(x, axis) => {
            let (outer, len, inner) = axis_extents(val(*x).shape(), *axis)?;
            let mut gx = vec![0.0; g.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |l: usize| (o * len + l) * inner + i;
                    let dot: f64 = (0..len).map(|l| g[idx(l)] * y[idx(l)]).sum();
                    for l in 0..len {
                        gx[idx(l)] = y[idx(l)] * (g[idx(l)] - dot);
                    }
                }
            }
            vec![(*x, gx)]
        }
        Op::Concat(xs, axis) => {
            let (outer, _, inner) = axis_extents(node.value.shape(), *axis)?;
            let mut parts: Vec<Vec<f64>> = xs.iter().map(|&i| Vec::with_capacity(val(i).len())).collect();
            let mut offset = 0;
            for _ in 0..outer {
                for (part, &i) in parts.iter_mut().zip(xs) {
                    let chunk = val(i).shape()[*axis] * inner;
                    part.extend_from_slice(&g[offset..offset + chunk]);
                    offset += chunk;
                }
            }
            xs.iter().copied().zip(parts).collect()
        }
        Op::Reshape(x) => vec![(*x, g.to_vec())],
        Op::Narrow { input, axis, start } => {
            let in_shape = val(*input).shape();
            let (outer, len, inner) = axis_extents(in_shape, *axis)?;
            let width = node.value.shape()[*axis];
            let mut gx = vec![0.0; outer * len * inner];
            for o in 0..outer {
                let src = o * width * inner;
                let dst = (o * len + start) * inner;
                gx[dst..dst + width * inner].copy_from_slice(&g[src..src + width * inner]);
            }
            vec![(*input, gx)]
        }
        Op::GatherRows(x, index) => {
            let (rows, cols) = val(*x).dims2()?;
            let mut gx = vec![0.0; rows * cols];
            for (k, &r) in index.iter().enumerate() {
                for c in 0..cols {
                    gx[r * cols + c] += g[k * cols + c];
                }
            }
            vec![(*x, gx)]
        }
        Op::ScatterAddRows(x, index) => {
            let (_, cols) = val(*x).dims2()?;
            let mut gx = Vec::with_capacity(index.len() * cols);
            for &r in index {
                gx.extend_from_slice(&g[r * cols..(r + 1) * cols]);
            }
            vec![(*x, gx)]
        }
        Op::BatchMatVec(mats, vecs) => {
            let (count, d_in) = val(*vecs).dims2()?;
            let d_out = if count == 0 { 0 } else { g.len() / count };
            let (mv, vv) = (val(*mats).data(), val(*vecs).data());
            let mut gm = vec![0.0; mv.len()];
            let mut gv = vec![0.0; vv.len()];
            for e in 0..count {
                for r in 0..d_out {
                    let ge = g[e * d_out + r];
                    let base = e * d_out * d_in + r * d_in;
                    for c in 0..d_in {
                        gm[base + c] = ge * vv[e * d_in + c];
                        gv[e * d_in + c] += ge * mv[base + c];
                    }
                }
            }
            vec![(*mats, gm), (*vecs, gv)]
        }
    })
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn map_unary(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = t.data().iter().map(|&v| f(v)).collect();
    Tensor::new(t.shape(), data).expect("same shape")
}

/// Elementwise binary op with exact-shape or one-element broadcasting.
fn zip_broadcast(a: &Tensor, b: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(a.shape(), data)
    } else if b.len() == 1 {
        let s = b.data()[0];
        Ok(map_unary(a, |x| f(x, s)))
    } else if a.len() == 1 {
        let s = a.data()[0];
        Ok(map_unary(b, |y| f(s, y)))
    } else {
        dim_err(format!(
            "{op}: incompatible shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        ))
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.with_value(self.id, |t| t.clone())
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |t| t.shape().to_vec())
    }

    pub fn item(&self) -> Result<f64> {
        self.tape.with_value(self.id, |t| t.item())
    }

    fn unary(self, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Self> {
        let value = self.tape.with_value(self.id, |t| map_unary(t, f));
        self.tape.push(value, op, name)
    }

    fn binary(
        self,
        other: Var<'t>,
        op: Op,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            zip_broadcast(&nodes[self.id].value, &nodes[other.id].value, name, f)?
        };
        self.tape.push(value, op, name)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Self> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            nodes[self.id].value.matmul(&nodes[other.id].value)?
        };
        self.tape.push(value, Op::MatMul(self.id, other.id), "matmul")
    }

    pub fn add(self, other: Var<'t>) -> Result<Self> {
        self.binary(other, Op::Add(self.id, other.id), "add", |a, b| a + b)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Self> {
        self.binary(other, Op::Sub(self.id, other.id), "sub", |a, b| a - b)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Self> {
        self.binary(other, Op::Mul(self.id, other.id), "mul", |a, b| a * b)
    }

    /// Adds a length-`d` bias to every row of an `n×d` matrix.
    pub fn add_row(self, bias: Var<'t>) -> Result<Self> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            let b = &nodes[bias.id].value;
            let (_, cols) = x.dims2()?;
            if b.len() != cols {
                return dim_err(format!(
                    "add_row: bias of length {} for rows of width {cols}",
                    b.len()
                ));
            }
            let data = x
                .data()
                .chunks(cols)
                .flat_map(|row| row.iter().zip(b.data()).map(|(v, c)| v + c))
                .collect();
            Tensor::new(x.shape(), data)?
        };
        self.tape.push(value, Op::AddRow(self.id, bias.id), "add_row")
    }

    pub fn scale(self, c: f64) -> Result<Self> {
        self.unary(Op::Scale(self.id, c), "scale", |v| v * c)
    }

    pub fn sigmoid(self) -> Result<Self> {
        self.unary(Op::Sigmoid(self.id), "sigmoid", sigmoid)
    }

    pub fn tanh(self) -> Result<Self> {
        self.unary(Op::Tanh(self.id), "tanh", f64::tanh)
    }

    pub fn relu(self) -> Result<Self> {
        self.unary(Op::Relu(self.id), "relu", |v| v.max(0.0))
    }

    pub fn softplus(self) -> Result<Self> {
        self.unary(Op::Softplus(self.id), "softplus", softplus)
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(self) -> Result<Self> {
        let value = self
            .tape
            .with_value(self.id, |t| Tensor::scalar(t.data().iter().sum()));
        self.tape.push(value, Op::Sum(self.id), "sum")
    }

    /// Sums out `axis`; the result drops that axis (rank 1 inputs give `[1]`).
    pub fn sum_axis(self, axis: usize) -> Result<Self> {
        let value = self.tape.with_value(self.id, |t| -> Result<Tensor> {
            let (outer, len, inner) = axis_extents(t.shape(), axis)?;
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    let src = (o * len + l) * inner;
                    for i in 0..inner {
                        data[o * inner + i] += t.data()[src + i];
                    }
                }
            }
            let mut shape: Vec<usize> = t.shape().to_vec();
            shape.remove(axis);
            if shape.is_empty() {
                shape.push(1);
            }
            Tensor::new(&shape, data)
        })?;
        self.tape.push(value, Op::SumAxis(self.id, axis), "sum_axis")
    }

    pub fn softmax(self, axis: usize) -> Result<Self> {
        let value = self.tape.with_value(self.id, |t| -> Result<Tensor> {
            let (outer, len, inner) = axis_extents(t.shape(), axis)?;
            let x = t.data();
            let mut data = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |l: usize| (o * len + l) * inner + i;
                    let max = (0..len).map(|l| x[idx(l)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for l in 0..len {
                        let e = (x[idx(l)] - max).exp();
                        data[idx(l)] = e;
                        total += e;
                    }
                    for l in 0..len {
                        data[idx(l)] /= total;
                    }
                }
            }
            Tensor::new(t.shape(), data)
        })?;
        self.tape.push(value, Op::Softmax(self.id, axis), "softmax")
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let value = self.tape.with_value(self.id, |t| t.reshape(shape))?;
        self.tape.push(value, Op::Reshape(self.id), "reshape")
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Self> {
        let value = self.tape.with_value(self.id, |t| -> Result<Tensor> {
            let (outer, full, inner) = axis_extents(t.shape(), axis)?;
            if start + len > full {
                return dim_err(format!(
                    "narrow [{start}, {}) exceeds axis length {full}",
                    start + len
                ));
            }
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let src = (o * full + start) * inner;
                data.extend_from_slice(&t.data()[src..src + len * inner]);
            }
            let mut shape = t.shape().to_vec();
            shape[axis] = len;
            Tensor::new(&shape, data)
        })?;
        self.tape.push(
            value,
            Op::Narrow {
                input: self.id,
                axis,
                start,
            },
            "narrow",
        )
    }

    /// Selects rows of a matrix; indices may repeat.
    pub fn gather_rows(self, index: &[usize]) -> Result<Self> {
        let value = self.tape.with_value(self.id, |t| -> Result<Tensor> {
            let (rows, cols) = match t.shape() {
                [r, c] => (*r, *c),
                s => return dim_err(format!("gather_rows needs a matrix, got {s:?}")),
            };
            let mut data = Vec::with_capacity(index.len() * cols);
            for &r in index {
                if r >= rows {
                    return dim_err(format!("row index {r} out of range for {rows} rows"));
                }
                data.extend_from_slice(t.row(r));
            }
            Tensor::new(&[index.len(), cols], data)
        })?;
        self.tape
            .push(value, Op::GatherRows(self.id, index.to_vec()), "gather_rows")
    }

    /// Sums row `k` into output row `index[k]`; output has `rows` rows.
    pub fn scatter_add_rows(self, index: &[usize], rows: usize) -> Result<Self> {
        let value = self.tape.with_value(self.id, |t| -> Result<Tensor> {
            let (count, cols) = match t.shape() {
                [r, c] => (*r, *c),
                s => return dim_err(format!("scatter_add_rows needs a matrix, got {s:?}")),
            };
            if count != index.len() {
                return dim_err(format!("{count} rows but {} indices", index.len()));
            }
            let mut data = vec![0.0; rows * cols];
            for (k, &r) in index.iter().enumerate() {
                if r >= rows {
                    return dim_err(format!("target row {r} out of range for {rows} rows"));
                }
                for c in 0..cols {
                    data[r * cols + c] += t.data()[k * cols + c];
                }
            }
            Tensor::new(&[rows, cols], data)
        })?;
        self.tape.push(
            value,
            Op::ScatterAddRows(self.id, index.to_vec()),
            "scatter_add_rows",
        )
    }

    /// Row-wise matrix-vector products: `self` is `[E, d_out*d_in]` holding one
    /// row-major `d_out×d_in` matrix per row, `vecs` is `[E, d_in]`.
    pub fn batch_matvec(self, vecs: Var<'t>) -> Result<Self> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let m = &nodes[self.id].value;
            let v = &nodes[vecs.id].value;
            let (count, width) = m.dims2()?;
            let (count_v, d_in) = v.dims2()?;
            if count != count_v || d_in == 0 || width % d_in != 0 {
                return dim_err(format!(
                    "batch_matvec: matrices {:?} incompatible with vectors {:?}",
                    m.shape(),
                    v.shape()
                ));
            }
            let d_out = width / d_in;
            multiply_counter::add((count * d_out * d_in) as u64);
            let mut data = vec![0.0; count * d_out];
            for e in 0..count {
                let vec_e = &v.data()[e * d_in..(e + 1) * d_in];
                for r in 0..d_out {
                    let row = &m.data()[e * width + r * d_in..e * width + (r + 1) * d_in];
                    data[e * d_out + r] = row.iter().zip(vec_e).map(|(a, b)| a * b).sum();
                }
            }
            Tensor::new(&[count, d_out], data)?
        };
        self.tape
            .push(value, Op::BatchMatVec(self.id, vecs.id), "batch_matvec")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        assert_eq!(x.sigmoid().unwrap().item().unwrap(), 0.5);
    }

    #[test]
    fn relu_negative_has_zero_gradient() {
        let tape = Tape::new();
        let x = tape.param(&Tensor::scalar(-3.0));
        let y = x.relu().unwrap();
        assert_eq!(y.item().unwrap(), 0.0);
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::new();
        let w = tape.param(&Tensor::vector(vec![1.0, 2.0]));
        let loss = w.mul(w).unwrap().sum().unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[2.0, 4.0]);
        assert!(tape.is_empty());
    }

    #[test]
    fn independent_leaf_gets_zero_gradient() {
        let tape = Tape::new();
        let w = tape.param(&Tensor::vector(vec![1.0, 2.0]));
        let x = tape.param(&Tensor::vector(vec![3.0]));
        let loss = x.mul(x).unwrap().sum().unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let w = tape.param(&Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_uniform_and_sum_axis() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0; 3]));
        let s = x.softmax(0).unwrap().value();
        for v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let m = tape.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        assert_eq!(m.sum_axis(0).unwrap().value().data(), &[4.0, 6.0]);
        assert_eq!(m.sum_axis(1).unwrap().value().data(), &[3.0, 7.0]);
    }

    #[test]
    fn concat_vectors() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![3.0]));
        let c = tape.concat(&[a, b], 0).unwrap();
        assert_eq!(c.value().data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn axis_errors() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(a.sum_axis(1), Err(Error::Dimension(_))));
        assert!(matches!(a.softmax(3), Err(Error::Dimension(_))));
        let m = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.concat(&[a, m], 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let b = tape.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(matches!(a.add(b), Err(Error::Dimension(_))));
        let s = tape.constant(Tensor::scalar(2.0));
        assert_eq!(a.mul(s).unwrap().value().data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1e308]));
        assert!(matches!(a.scale(10.0), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn scatter_is_adjoint_of_gather() {
        let tape = Tape::new();
        let x = tape.param(&Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let g = x.gather_rows(&[2, 0, 2]).unwrap();
        assert_eq!(g.value().data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        let s = g.scatter_add_rows(&[0, 0, 1], 2).unwrap();
        assert_eq!(s.value().data(), &[6.0, 8.0, 5.0, 6.0]);
        let grads = tape.backward(s.sum().unwrap()).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }
}
