//! Tape-based reverse-mode differentiation.
//!
//! Every operation evaluates eagerly and appends a node to the tape. Nodes are
//! stored in creation order, which is already a topological order, so the
//! backward pass is a single reverse sweep that visits each node once.

use crate::error::{Result, TensorError};
use crate::tensor::{matmul_kernel, matmul_nt_kernel, matmul_tn_kernel, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Sigmoid(Var),
    Relu(Var),
    Ln(Var),
    Clamp(Var, f64, f64),
    SumAll(Var),
    SumRows(Var),
    SumCols(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    GroupMax(Var, Vec<usize>),
    Reshape(Var),
    Select(Var, Vec<usize>),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        use Op::*;
        match self {
            Leaf => vec![],
            MatMul(a, b) | MatMulNT(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b)
            | AddRow(a, b) => vec![*a, *b],
            Transpose(a) | Scale(a, _) | AddScalar(a) | Sigmoid(a) | Relu(a) | Ln(a)
            | Clamp(a, _, _) | SumAll(a) | SumRows(a) | SumCols(a) | Softmax(a)
            | LogSoftmax(a) | GatherRows(a, _) | GroupMax(a, _) | Reshape(a) | Select(a, _) => {
                vec![*a]
            }
            LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            ConcatCols(vs) | ConcatRows(vs) => vs.clone(),
        }
    }

    fn name(&self) -> &'static str {
        use Op::*;
        match self {
            Leaf => "leaf",
            MatMul(..) => "matmul",
            MatMulNT(..) => "matmul_nt",
            Transpose(..) => "transpose",
            Add(..) => "add",
            Sub(..) => "sub",
            Mul(..) => "mul",
            Div(..) => "div",
            AddRow(..) => "add_row",
            Scale(..) => "scale",
            AddScalar(..) => "add_scalar",
            Sigmoid(..) => "sigmoid",
            Relu(..) => "relu",
            Ln(..) => "ln",
            Clamp(..) => "clamp",
            SumAll(..) => "sum_all",
            SumRows(..) => "sum_rows",
            SumCols(..) => "sum_cols",
            Softmax(..) => "softmax",
            LogSoftmax(..) => "log_softmax",
            LayerNorm { .. } => "layer_norm",
            ConcatCols(..) => "concat_cols",
            ConcatRows(..) => "concat_rows",
            GatherRows(..) => "gather_rows",
            GroupMax(..) => "group_max",
            Reshape(..) => "reshape",
            Select(..) => "select",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<Tensor> {
        let data = self.grads.get(var.0)?.as_ref()?;
        Tensor::new(self.shapes[var.0].clone(), data.clone()).ok()
    }

    /// Gradient data, or `None` when no path from the loss reaches `var`.
    pub fn data(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0)?.as_deref()
    }
}

/// Records operations for one logical execution context.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_finite(t: &Tensor, op: &'static str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(TensorError::NonFinite(op))
    }
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an input tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        check_finite(&value, "leaf")?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        check_finite(&value, op.name())?;
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        let t = self.value(v);
        if t.shape().len() != 2 {
            return Err(TensorError::Shape(format!(
                "{what} expects a matrix, got {:?}",
                t.shape()
            )));
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(TensorError::Shape(format!("matmul [{m},{k}] x [{k2},{n}]")));
        }
        let c = matmul_kernel(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::new(vec![m, n], c)?, Op::MatMul(a, b))
    }

    /// `a bᵀ` without materialising the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul_nt")?;
        let (n, k2) = self.dims2(b, "matmul_nt")?;
        if k != k2 {
            return Err(TensorError::Shape(format!(
                "matmul_nt [{m},{k}] x [{n},{k2}]ᵀ"
            )));
        }
        let c = matmul_nt_kernel(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::new(vec![m, n], c)?, Op::MatMulNT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.dims2(a, "transpose")?;
        let t = self.value(a).transpose();
        self.push(t, Op::Transpose(a))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, op.name())?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(t, op)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(t, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Adds a length-`n` vector to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let n = self.value(a).cols();
        if self.value(row).numel() != n {
            return Err(TensorError::Shape(format!(
                "add_row: {:?} + {:?}",
                self.value(a).shape(),
                self.value(row).shape()
            )));
        }
        let rv = self.value(row).data();
        let ta = self.value(a);
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_mut(n.max(1)) {
            for (x, r) in chunk.iter_mut().zip(rv) {
                *x += r;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(t, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid(a), sigmoid_scalar)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Ln(a), f64::ln)
    }

    /// Clamps into `[lo, hi]`; gradient flows only where the input is inside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.map(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel().max(1) as f64;
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Column sums: `[m, n] -> [1, n]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "sum_rows")?;
        let d = self.value(a).data();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, x) in out.iter_mut().zip(&d[i * n..(i + 1) * n]) {
                *o += x;
            }
        }
        self.push(Tensor::new(vec![1, n], out)?, Op::SumRows(a))
    }

    /// Row sums: `[m, n] -> [m, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "sum_cols")?;
        let d = self.value(a).data();
        let out = (0..m).map(|i| d[i * n..(i + 1) * n].iter().sum()).collect();
        self.push(Tensor::new(vec![m, 1], out)?, Op::SumCols(a))
    }

    /// Row-wise softmax with an optional additive mask of `0` / `-inf`.
    ///
    /// Masked entries get probability exactly zero. A row with every entry
    /// masked is rejected; callers are expected to unmask such rows first.
    pub fn softmax_masked(&mut self, logits: Var, mask: Option<&Tensor>) -> Result<Var> {
        let (r, c) = self.dims2(logits, "softmax")?;
        if let Some(m) = mask {
            if m.shape() != [r, c] {
                return Err(TensorError::Shape(format!(
                    "softmax mask {:?} for logits [{r},{c}]",
                    m.shape()
                )));
            }
            if let Some(bad) = m
                .data()
                .iter()
                .find(|&&v| !(v == 0.0 || v == f64::NEG_INFINITY))
            {
                return Err(TensorError::InvalidMask(format!(
                    "entries must be 0 or -inf, found {bad}"
                )));
            }
        }
        let x = self.value(logits).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let visible = |j: usize| mask.is_none_or(|m| m.data()[i * c + j] == 0.0);
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if visible(j) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(TensorError::FullyMasked(i));
            }
            let orow = &mut out[i * c..(i + 1) * c];
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if visible(j) {
                    let e = (v - max).exp();
                    orow[j] = e;
                    sum += e;
                }
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
        self.push(Tensor::new(vec![r, c], out)?, Op::Softmax(logits))
    }

    pub fn softmax(&mut self, logits: Var) -> Result<Var> {
        self.softmax_masked(logits, None)
    }

    pub fn log_softmax(&mut self, logits: Var) -> Result<Var> {
        let (r, c) = self.dims2(logits, "log_softmax")?;
        let x = self.value(logits).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = v - lse;
            }
        }
        self.push(Tensor::new(vec![r, c], out)?, Op::LogSoftmax(logits))
    }

    /// Normalises each row to zero mean and unit variance, then applies the
    /// affine `gamma * x + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let tx = self.value(x);
        let d = tx.cols();
        if d == 0 || self.value(gamma).numel() != d || self.value(beta).numel() != d {
            return Err(TensorError::Shape(format!(
                "layer_norm: x {:?}, gamma {:?}, beta {:?}",
                tx.shape(),
                self.value(gamma).shape(),
                self.value(beta).shape()
            )));
        }
        let rows = tx.rows();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; rows * d];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; rows * d];
        for i in 0..rows {
            let row = tx.row(i);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[i * d + j] = h;
                out[i * d + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::new(tx.shape().to_vec(), out)?;
        self.push(
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| TensorError::Shape("concat_cols of nothing".into()))?;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols")?;
            if r != rows {
                return Err(TensorError::Shape(format!(
                    "concat_cols: {r} rows vs {rows}"
                )));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push(
            Tensor::new(vec![rows, total], out)?,
            Op::ConcatCols(parts.to_vec()),
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts
            .first()
            .map(|&p| self.value(p).cols())
            .ok_or_else(|| TensorError::Shape("concat_rows of nothing".into()))?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows")?;
            if c != cols {
                return Err(TensorError::Shape(format!(
                    "concat_rows: {c} cols vs {cols}"
                )));
            }
            rows += r;
            out.extend_from_slice(self.value(p).data());
        }
        self.push(
            Tensor::new(vec![rows, cols], out)?,
            Op::ConcatRows(parts.to_vec()),
        )
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = self.dims2(a, "gather_rows")?;
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(TensorError::Index { index: i, len: r });
            }
            out.extend_from_slice(self.value(a).row(i));
        }
        self.push(
            Tensor::new(vec![idx.len(), c], out)?,
            Op::GatherRows(a, idx.to_vec()),
        )
    }

    /// Max over consecutive groups of `group` rows: `[g*group, c] -> [g, c]`.
    /// Ties resolve to the earliest row.
    pub fn group_max(&mut self, a: Var, group: usize) -> Result<Var> {
        let (r, c) = self.dims2(a, "group_max")?;
        if group == 0 || r % group != 0 {
            return Err(TensorError::Shape(format!(
                "group_max: {r} rows not divisible into groups of {group}"
            )));
        }
        let g = r / group;
        let d = self.value(a).data();
        let mut out = vec![f64::NEG_INFINITY; g * c];
        let mut arg = vec![0usize; g * c];
        for gi in 0..g {
            for s in 0..group {
                let row = gi * group + s;
                for j in 0..c {
                    let v = d[row * c + j];
                    if v > out[gi * c + j] {
                        out[gi * c + j] = v;
                        arg[gi * c + j] = row * c + j;
                    }
                }
            }
        }
        self.push(Tensor::new(vec![g, c], out)?, Op::GroupMax(a, arg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape.to_vec())?;
        self.push(t, Op::Reshape(a))
    }

    /// Gathers flat element indices into a 1-D tensor.
    pub fn select(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let d = self.value(a).data();
        let mut out = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= d.len() {
                return Err(TensorError::Index {
                    index: i,
                    len: d.len(),
                });
            }
            out.push(d[i]);
        }
        self.push(
            Tensor::new(vec![idx.len()], out)?,
            Op::Select(a, idx.to_vec()),
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(TensorError::NotScalar(self.value(loss).shape().to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            // Interior gradients are not part of the public result.
        }
        let shapes = self.nodes[..n]
            .iter()
            .map(|node| node.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
        f(slot);
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let nn = self.value(*b).shape()[1];
                if self.requires_grad(*a) {
                    let da = matmul_nt_kernel(g, self.value(*b).data(), m, nn, k);
                    self.accumulate(grads, *a, |s| add_into(s, &da));
                }
                if self.requires_grad(*b) {
                    let db = matmul_tn_kernel(self.value(*a).data(), g, m, k, nn);
                    self.accumulate(grads, *b, |s| add_into(s, &db));
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = (self.value(*a).shape()[0], self.value(*a).shape()[1]);
                let nn = self.value(*b).shape()[0];
                if self.requires_grad(*a) {
                    let da = matmul_kernel(g, self.value(*b).data(), m, nn, k);
                    self.accumulate(grads, *a, |s| add_into(s, &da));
                }
                if self.requires_grad(*b) {
                    let db = matmul_tn_kernel(g, self.value(*a).data(), m, nn, k);
                    self.accumulate(grads, *b, |s| add_into(s, &db));
                }
            }
            Op::Transpose(a) => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                self.accumulate(grads, *a, |s| {
                    // output [m,n] = input [n,m]ᵀ
                    for r in 0..m {
                        for c in 0..n {
                            s[c * m + r] += g[r * n + c];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                self.accumulate(grads, *b, |s| add_into(s, g));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                self.accumulate(grads, *b, |s| {
                    for (x, gv) in s.iter_mut().zip(g) {
                        *x -= gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, |s| {
                    for ((x, gv), o) in s.iter_mut().zip(g).zip(bv) {
                        *x += gv * o;
                    }
                });
                self.accumulate(grads, *b, |s| {
                    for ((x, gv), o) in s.iter_mut().zip(g).zip(av) {
                        *x += gv * o;
                    }
                });
            }
            Op::Div(a, b) => {
                let bv = self.value(*b).data();
                self.accumulate(grads, *a, |s| {
                    for ((x, gv), d) in s.iter_mut().zip(g).zip(bv) {
                        *x += gv / d;
                    }
                });
                self.accumulate(grads, *b, |s| {
                    for (((x, gv), d), q) in s.iter_mut().zip(g).zip(bv).zip(y) {
                        *x -= gv * q / d;
                    }
                });
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
                let n = self.value(*row).numel();
                self.accumulate(grads, *row, |s| {
                    for chunk in g.chunks(n.max(1)) {
                        add_into(s, chunk);
                    }
                });
            }
            Op::Scale(a, c) => {
                self.accumulate(grads, *a, |s| {
                    for (x, gv) in s.iter_mut().zip(g) {
                        *x += gv * c;
                    }
                });
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                self.accumulate(grads, *a, |s| add_into(s, g));
            }
            Op::Sigmoid(a) => {
                self.accumulate(grads, *a, |s| {
                    for ((x, gv), yv) in s.iter_mut().zip(g).zip(y) {
                        *x += gv * yv * (1.0 - yv);
                    }
                });
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |s| {
                    for ((x, gv), xv) in s.iter_mut().zip(g).zip(av) {
                        if *xv > 0.0 {
                            *x += gv;
                        }
                    }
                });
            }
            Op::Ln(a) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |s| {
                    for ((x, gv), xv) in s.iter_mut().zip(g).zip(av) {
                        *x += gv / xv;
                    }
                });
            }
            Op::Clamp(a, lo, hi) => {
                let av = self.value(*a).data();
                self.accumulate(grads, *a, |s| {
                    for ((x, gv), xv) in s.iter_mut().zip(g).zip(av) {
                        if *xv >= *lo && *xv <= *hi {
                            *x += gv;
                        }
                    }
                });
            }
            Op::SumAll(a) => {
                let g0 = g[0];
                self.accumulate(grads, *a, |s| s.iter_mut().for_each(|x| *x += g0));
            }
            Op::SumRows(a) => {
                let n = g.len();
                self.accumulate(grads, *a, |s| {
                    for chunk in s.chunks_mut(n.max(1)) {
                        add_into(chunk, g);
                    }
                });
            }
            Op::SumCols(a) => {
                let n = self.value(*a).cols();
                self.accumulate(grads, *a, |s| {
                    for (r, chunk) in s.chunks_mut(n.max(1)).enumerate() {
                        chunk.iter_mut().for_each(|x| *x += g[r]);
                    }
                });
            }
            Op::Softmax(a) => {
                let c = node.value.cols();
                self.accumulate(grads, *a, |s| {
                    for ((srow, grow), yrow) in
                        s.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        for ((x, gv), yv) in srow.iter_mut().zip(grow).zip(yrow) {
                            *x += yv * (gv - dot);
                        }
                    }
                });
            }
            Op::LogSoftmax(a) => {
                let c = node.value.cols();
                self.accumulate(grads, *a, |s| {
                    for ((srow, grow), yrow) in
                        s.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c))
                    {
                        let total: f64 = grow.iter().sum();
                        for ((x, gv), yv) in srow.iter_mut().zip(grow).zip(yrow) {
                            *x += gv - yv.exp() * total;
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = node.value.cols();
                let gam = self.value(*gamma).data();
                self.accumulate(grads, *gamma, |s| {
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((x, gv), h) in s.iter_mut().zip(grow).zip(hrow) {
                            *x += gv * h;
                        }
                    }
                });
                self.accumulate(grads, *beta, |s| {
                    for grow in g.chunks(d) {
                        add_into(s, grow);
                    }
                });
                self.accumulate(grads, *x, |s| {
                    let mut dh = vec![0.0; d];
                    for (r, ((srow, grow), hrow)) in s
                        .chunks_mut(d)
                        .zip(g.chunks(d))
                        .zip(xhat.chunks(d))
                        .enumerate()
                    {
                        for j in 0..d {
                            dh[j] = grow[j] * gam[j];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / d as f64;
                        let mean_dhh =
                            dh.iter().zip(hrow).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            srow[j] += inv_std[r] * (dh[j] - mean_dh - hrow[j] * mean_dhh);
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    self.accumulate(grads, p, |s| {
                        for (srow, grow) in s.chunks_mut(c).zip(g.chunks(total)) {
                            add_into(srow, &grow[offset..offset + c]);
                        }
                    });
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).numel();
                    self.accumulate(grads, p, |s| add_into(s, &g[offset..offset + len]));
                    offset += len;
                }
            }
            Op::GatherRows(a, idx) => {
                let c = node.value.cols();
                self.accumulate(grads, *a, |s| {
                    for (k, &r) in idx.iter().enumerate() {
                        add_into(&mut s[r * c..(r + 1) * c], &g[k * c..(k + 1) * c]);
                    }
                });
            }
            Op::GroupMax(a, arg) => {
                self.accumulate(grads, *a, |s| {
                    for (&src, gv) in arg.iter().zip(g) {
                        s[src] += gv;
                    }
                });
            }
            Op::Select(a, idx) => {
                self.accumulate(grads, *a, |s| {
                    for (&src, gv) in idx.iter().zip(g) {
                        s[src] += gv;
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
