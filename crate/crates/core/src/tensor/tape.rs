use super::kernels::{gemm, sigmoid, softplus, MatView};
use super::{axis_extents, Tensor};
use crate::error::{KrfError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    BatchMatmul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    AddRow(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Log(Var),
    Softmax(Var, usize),
    Concat(Vec<Var>, usize),
    Select(Var, usize, usize),
    Reshape(Var),
    Transpose(Var),
    Gather(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    BceWithLogits(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Linear record of one forward pass.
///
/// Nodes are appended in execution order; `backward` walks them in reverse.
/// A tape is built per forward pass and consumed by `backward`.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }

    /// Node indices in the order backward processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Broadcast {
    Same,
    LhsScalar,
    RhsScalar,
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

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].value.requires_grad
    }

    fn push(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        value.requires_grad = requires_grad;
        value.grad = None;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn push_derived(&mut self, shape: &[usize], data: Vec<f64>, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|&v| self.requires_grad(v));
        let value = Tensor::new(shape, data).expect("op produced inconsistent shape");
        self.push(value, op, rg)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Matrix product of rank-2 operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(KrfError::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            MatView::row_major(self.value(a).data(), m, k),
            MatView::row_major(self.value(b).data(), k, n),
            &mut out,
            0.0,
        );
        Ok(self.push_derived(&[m, n], out, Op::Matmul(a, b), &[a, b]))
    }

    /// Batched product `[b, m, k] × [b, k, n] -> [b, m, n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(KrfError::shape("batch_matmul", sa, sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bs * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            gemm(
                MatView::row_major(&da[i * m * k..(i + 1) * m * k], m, k),
                MatView::row_major(&db[i * k * n..(i + 1) * k * n], k, n),
                &mut out[i * m * n..(i + 1) * m * n],
                0.0,
            );
        }
        Ok(self.push_derived(&[bs, m, n], out, Op::BatchMatmul(a, b), &[a, b]))
    }

    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<(Broadcast, Vec<usize>)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa == sb {
            Ok((Broadcast::Same, sa.to_vec()))
        } else if self.value(a).len() == 1 {
            Ok((Broadcast::LhsScalar, sb.to_vec()))
        } else if self.value(b).len() == 1 {
            Ok((Broadcast::RhsScalar, sa.to_vec()))
        } else {
            Err(KrfError::shape(op, sa, sb))
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (mode, shape) = self.broadcast(name, a, b)?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let out: Vec<f64> = match mode {
            Broadcast::Same => da.iter().zip(db).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::LhsScalar => db.iter().map(|&y| f(da[0], y)).collect(),
            Broadcast::RhsScalar => da.iter().map(|&x| f(x, db[0])).collect(),
        };
        Ok(self.push_derived(&shape, out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).data().iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        self.push_derived(&shape, out, Op::Scale(x, factor), &[x])
    }

    pub fn shift(&mut self, x: Var, offset: f64) -> Var {
        let out = self.value(x).data().iter().map(|v| v + offset).collect();
        let shape = self.shape(x).to_vec();
        self.push_derived(&shape, out, Op::Shift(x), &[x])
    }

    /// Adds a bias vector to every row: `x[.., j] + bias[j]`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        let n = *sx.last().unwrap();
        if sb.len() != 1 || sb[0] != n {
            return Err(KrfError::shape("add_row", sx, sb));
        }
        let b = self.value(bias).data();
        let out = self
            .value(x)
            .data()
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(b).map(|(v, c)| v + c))
            .collect();
        let shape = sx.to_vec();
        Ok(self.push_derived(&shape, out, Op::AddRow(x, bias), &[x, bias]))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).data().iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push_derived(&shape, out, op, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|&&v| v <= 0.0) {
            return Err(KrfError::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(x, f64::ln, Op::Log(x)))
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(KrfError::shape("softmax", &shape, &[axis]));
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let max = (0..len).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] /= total;
                }
            }
        }
        Ok(self.push_derived(&shape, out, Op::Softmax(x, axis), &[x]))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| KrfError::InvalidTensor("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(KrfError::shape("concat", &base, &[axis]));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(KrfError::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_extents(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let len = self.shape(p)[axis];
                let block = len * inner;
                out.extend_from_slice(&self.value(p).data()[o * block..(o + 1) * block]);
            }
        }
        Ok(self.push_derived(&shape, out, Op::Concat(parts.to_vec(), axis), parts))
    }

    /// Picks `index` along `axis`, dropping that axis.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || index >= shape[axis] || shape.len() < 2 {
            return Err(KrfError::shape("select", &shape, &[axis, index]));
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let start = (o * len + index) * inner;
            out.extend_from_slice(&src[start..start + inner]);
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok(self.push_derived(&out_shape, out, Op::Select(x, axis, index), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() {
            return Err(KrfError::shape("reshape", self.shape(x), shape));
        }
        let data = self.value(x).data().to_vec();
        Ok(self.push_derived(shape, data, Op::Reshape(x), &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.value(x).rank() != 2 {
            return Err(KrfError::shape("transpose", self.shape(x), &[]));
        }
        let t = self.value(x).transpose2();
        let shape = t.shape().to_vec();
        Ok(self.push_derived(&shape, t.into_data(), Op::Transpose(x), &[x]))
    }

    /// Row lookup into a rank-2 table: `[indices.len(), cols]`.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(table);
        if shape.len() != 2 {
            return Err(KrfError::shape("gather", shape, &[]));
        }
        let (rows, cols) = (shape[0], shape[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(KrfError::Domain {
                op: "gather",
                detail: format!("row {bad} out of range for table with {rows} rows"),
            });
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            out.extend_from_slice(&src[i * cols..(i + 1) * cols]);
        }
        Ok(self.push_derived(&[indices.len(), cols], out, Op::Gather(table, indices.to_vec()), &[table]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push_derived(&[1], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push_derived(&[1], vec![m], Op::Mean(x), &[x])
    }

    /// Batch-mean of per-row binary cross-entropy summed over labels,
    /// evaluated from logits in the overflow-free softplus form.
    pub fn bce_with_logits(&mut self, scores: Var, targets: &Tensor) -> Result<Var> {
        let shape = self.shape(scores);
        if shape.len() != 2 || shape != targets.shape() {
            return Err(KrfError::shape("bce_with_logits", shape, targets.shape()));
        }
        if let Some(bad) = targets.data().iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(KrfError::Domain {
                op: "bce_with_logits",
                detail: format!("target {bad} is not 0 or 1"),
            });
        }
        let batch = shape[0] as f64;
        let total: f64 = self
            .value(scores)
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&s, &y)| softplus(s) - s * y)
            .sum();
        Ok(self.push_derived(
            &[1],
            vec![total / batch],
            Op::BceWithLogits(scores, targets.data().to_vec()),
            &[scores],
        ))
    }

    /// Reverse sweep from the scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(KrfError::InvalidTensor(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        let mut visited = Vec::new();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !nodes[i].value.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            visited.push(i);
            let node = &nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            let mut acc = Acc {
                nodes: &nodes,
                grads: &mut grads,
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Matmul(a, b) => {
                    let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    let gv = MatView::row_major(&g, m, n);
                    if let Some(ga) = acc.slot(*a) {
                        gemm(gv, MatView::transposed(nodes[b.0].value.data(), k, n), ga, 1.0);
                    }
                    if let Some(gb) = acc.slot(*b) {
                        gemm(MatView::transposed(nodes[a.0].value.data(), m, k), gv, gb, 1.0);
                    }
                }
                Op::BatchMatmul(a, b) => {
                    let (sa, sb) = (nodes[a.0].value.shape(), nodes[b.0].value.shape());
                    let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                    let (da, db) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    if let Some(ga) = acc.slot(*a) {
                        for t in 0..bs {
                            gemm(
                                MatView::row_major(&g[t * m * n..(t + 1) * m * n], m, n),
                                MatView::transposed(&db[t * k * n..(t + 1) * k * n], k, n),
                                &mut ga[t * m * k..(t + 1) * m * k],
                                1.0,
                            );
                        }
                    }
                    if let Some(gb) = acc.slot(*b) {
                        for t in 0..bs {
                            gemm(
                                MatView::transposed(&da[t * m * k..(t + 1) * m * k], m, k),
                                MatView::row_major(&g[t * m * n..(t + 1) * m * n], m, n),
                                &mut gb[t * k * n..(t + 1) * k * n],
                                1.0,
                            );
                        }
                    }
                }
                Op::Add(a, b) => {
                    acc.broadcast_into(*a, &g, |gi, _| gi);
                    acc.broadcast_into(*b, &g, |gi, _| gi);
                }
                Op::Sub(a, b) => {
                    acc.broadcast_into(*a, &g, |gi, _| gi);
                    acc.broadcast_into(*b, &g, |gi, _| -gi);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    let pick = |v: &[f64], k: usize| if v.len() == 1 { v[0] } else { v[k] };
                    acc.broadcast_into(*a, &g, |gi, k| gi * pick(vb, k));
                    acc.broadcast_into(*b, &g, |gi, k| gi * pick(va, k));
                }
                Op::Scale(x, c) => acc.elementwise(*x, &g, |gi, _| gi * c),
                Op::Shift(x) | Op::Reshape(x) => acc.elementwise(*x, &g, |gi, _| gi),
                Op::AddRow(x, b) => {
                    acc.elementwise(*x, &g, |gi, _| gi);
                    if let Some(gb) = acc.slot(*b) {
                        let n = gb.len();
                        for row in g.chunks_exact(n) {
                            for (t, v) in gb.iter_mut().zip(row) {
                                *t += v;
                            }
                        }
                    }
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    acc.elementwise(*x, &g, |gi, k| gi * (1.0 - y[k] * y[k]));
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    acc.elementwise(*x, &g, |gi, k| gi * y[k] * (1.0 - y[k]));
                }
                Op::Relu(x) => {
                    let v = nodes[x.0].value.data();
                    acc.elementwise(*x, &g, |gi, k| if v[k] > 0.0 { gi } else { 0.0 });
                }
                Op::LeakyRelu(x, slope) => {
                    let v = nodes[x.0].value.data();
                    acc.elementwise(*x, &g, |gi, k| if v[k] > 0.0 { gi } else { gi * slope });
                }
                Op::Exp(x) => {
                    let y = node.value.data();
                    acc.elementwise(*x, &g, |gi, k| gi * y[k]);
                }
                Op::Log(x) => {
                    let v = nodes[x.0].value.data();
                    acc.elementwise(*x, &g, |gi, k| gi / v[k]);
                }
                Op::Softmax(x, axis) => {
                    let y = node.value.data();
                    let (outer, len, inner) = axis_extents(node.value.shape(), *axis);
                    if let Some(gx) = acc.slot(*x) {
                        for o in 0..outer {
                            for c in 0..inner {
                                let at = |j: usize| o * len * inner + j * inner + c;
                                let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                                for j in 0..len {
                                    gx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                                }
                            }
                        }
                    }
                }
                Op::Concat(parts, axis) => {
                    let (outer, total, inner) = axis_extents(node.value.shape(), *axis);
                    let mut offset = 0;
                    for p in parts {
                        let len = nodes[p.0].value.shape()[*axis];
                        if let Some(gp) = acc.slot(*p) {
                            for o in 0..outer {
                                let src = (o * total + offset) * inner;
                                let dst = o * len * inner;
                                for (t, v) in gp[dst..dst + len * inner]
                                    .iter_mut()
                                    .zip(&g[src..src + len * inner])
                                {
                                    *t += v;
                                }
                            }
                        }
                        offset += len;
                    }
                }
                Op::Select(x, axis, index) => {
                    let (outer, len, inner) = axis_extents(nodes[x.0].value.shape(), *axis);
                    if let Some(gx) = acc.slot(*x) {
                        for o in 0..outer {
                            let dst = (o * len + index) * inner;
                            for (t, v) in gx[dst..dst + inner].iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                                *t += v;
                            }
                        }
                    }
                }
                Op::Transpose(x) => {
                    let s = node.value.shape();
                    let (r, c) = (s[0], s[1]);
                    if let Some(gx) = acc.slot(*x) {
                        for a in 0..r {
                            for b in 0..c {
                                gx[b * r + a] += g[a * c + b];
                            }
                        }
                    }
                }
                Op::Gather(table, indices) => {
                    let cols = nodes[table.0].value.shape()[1];
                    if let Some(gt) = acc.slot(*table) {
                        for (row, &idx) in indices.iter().enumerate() {
                            for (t, v) in gt[idx * cols..(idx + 1) * cols]
                                .iter_mut()
                                .zip(&g[row * cols..(row + 1) * cols])
                            {
                                *t += v;
                            }
                        }
                    }
                }
                Op::Sum(x) => acc.spread(*x, |_| g[0]),
                Op::Mean(x) => {
                    let n = nodes[x.0].value.len() as f64;
                    acc.spread(*x, |_| g[0] / n)
                }
                Op::BceWithLogits(s, targets) => {
                    let v = nodes[s.0].value.data();
                    let batch = nodes[s.0].value.shape()[0] as f64;
                    acc.spread(*s, |k| g[0] * (sigmoid(v[k]) - targets[k]) / batch);
                }
            }
        }
        Ok(Gradients { grads, visited })
    }
}

struct Acc<'a> {
    nodes: &'a [Node],
    grads: &'a mut [Option<Vec<f64>>],
}

impl Acc<'_> {
    fn slot(&mut self, v: Var) -> Option<&mut [f64]> {
        let node = &self.nodes[v.0];
        if !node.value.requires_grad {
            return None;
        }
        let len = node.value.len();
        Some(self.grads[v.0].get_or_insert_with(|| vec![0.0; len]))
    }

    /// Adds `f(g[k], k)` to every element of `v`'s gradient (same shape as `g`).
    fn elementwise(&mut self, v: Var, g: &[f64], f: impl Fn(f64, usize) -> f64) {
        if let Some(gv) = self.slot(v) {
            for (k, (t, &gi)) in gv.iter_mut().zip(g).enumerate() {
                *t += f(gi, k);
            }
        }
    }

    /// Adds `f(k)` to every element of `v`'s gradient.
    fn spread(&mut self, v: Var, f: impl Fn(usize) -> f64) {
        if let Some(gv) = self.slot(v) {
            for (k, t) in gv.iter_mut().enumerate() {
                *t += f(k);
            }
        }
    }

    /// Like `elementwise`, but reduces into a one-element operand.
    fn broadcast_into(&mut self, v: Var, g: &[f64], f: impl Fn(f64, usize) -> f64) {
        let scalar = self.nodes[v.0].value.len() == 1 && g.len() != 1;
        if let Some(gv) = self.slot(v) {
            if scalar {
                gv[0] += g.iter().enumerate().map(|(k, &gi)| f(gi, k)).sum::<f64>();
            } else {
                for (k, (t, &gi)) in gv.iter_mut().zip(g).enumerate() {
                    *t += f(gi, k);
                }
            }
        }
    }
}
