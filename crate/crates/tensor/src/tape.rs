//! Recording tape for reverse-mode automatic differentiation.
//!
//! Every operation appends a node whose inputs were recorded earlier, so the
//! node list is already in topological order and `backward` simply walks it
//! in reverse.

use crate::error::{Result, TensorError};
use crate::kernels::{matmul_nt, matmul_tn};
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside this crate.
///
/// `backward` receives the input values, the forward output and the upstream
/// gradient, and returns one gradient per input (same order, same shapes).
pub trait CustomOp<F: Real>: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        output: &Tensor<F>,
        grad_out: &Tensor<F>,
    ) -> Vec<Tensor<F>>;
}

enum Op<F: Real> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    Transpose(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        eps: F,
    },
    Gelu(Var),
    Relu(Var),
    Tanh(Var),
    Square(Var),
    NormalizeRows {
        x: Var,
        eps: F,
    },
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<F>>,
    },
}

struct Node<F: Real> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Single-threaded computation record.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients indexed by tape node.
pub struct Gradients<F: Real> {
    grads: Vec<Option<Tensor<F>>>,
    shapes: Vec<Vec<usize>>,
}

impl<F: Real> Gradients<F> {
    /// Gradient for `v`; nodes not on any path to the loss get zeros.
    pub fn wrt(&self, v: Var) -> Tensor<F> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<F> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push_unchecked(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(
        &mut self,
        name: &'static str,
        value: Tensor<F>,
        op: Op<F>,
        inputs: &[Var],
    ) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    /// Adds a length-`c` vector to every row of an `r×c` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let xv = self.value(x);
        let rv = self.value(row);
        let (_, c) = xv.dims2()?;
        if rv.len() != c {
            return Err(xv.mismatch("add_row", rv));
        }
        let mut out = xv.clone();
        for chunk in out.data_mut().chunks_mut(c) {
            for (o, &b) in chunk.iter_mut().zip(rv.data()) {
                *o = *o + b;
            }
        }
        self.push("add_row", out, Op::AddRow(x, row), &[x, row])
    }

    pub fn scale(&mut self, x: Var, s: F) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        self.push("scale", out, Op::Scale(x, s), &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        self.push("transpose", out, Op::Transpose(x), &[x])
    }

    /// Row-wise softmax over the last axis, stabilized by the row maximum.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (_, c) = xv.dims2()?;
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
            let mut total = F::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        self.push("softmax", out, Op::Softmax(x), &[x])
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: F) -> Result<Var> {
        let xv = self.value(x);
        let (_, c) = xv.dims2()?;
        let gv = self.value(gain);
        let bv = self.value(bias);
        if gv.len() != c || bv.len() != c {
            return Err(xv.mismatch("layer_norm", gv));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            let (mean, inv_std) = row_stats(row, eps);
            for (i, v) in row.iter_mut().enumerate() {
                *v = (*v - mean) * inv_std * gv.data()[i] + bv.data()[i];
            }
        }
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm { x, gain, bias, eps },
            &[x, gain, bias],
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| gelu_fwd(v));
        self.push("gelu", out, Op::Gelu(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(F::zero()));
        self.push("relu", out, Op::Relu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.tanh());
        self.push("tanh", out, Op::Tanh(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v * v);
        self.push("square", out, Op::Square(x), &[x])
    }

    /// Scales every row to unit L2 norm (`x / sqrt(|x|² + eps)`).
    pub fn normalize_rows(&mut self, x: Var, eps: F) -> Result<Var> {
        let xv = self.value(x);
        let (_, c) = xv.dims2()?;
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            let norm = (row.iter().fold(F::zero(), |a, &v| a + v * v) + eps).sqrt();
            for v in row.iter_mut() {
                *v = *v / norm;
            }
        }
        self.push("normalize_rows", out, Op::NormalizeRows { x, eps }, &[x])
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        if len == 0 || start + len > r {
            return Err(TensorError::Contract(format!(
                "slice_rows {start}..{} out of range for {r} rows",
                start + len
            )));
        }
        let out = Tensor::new(
            vec![len, c],
            xv.data()[start * c..(start + len) * c].to_vec(),
        )?;
        self.push("slice_rows", out, Op::SliceRows { x, start }, &[x])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat_rows of nothing".into()))?;
        let (_, c) = self.value(*first).dims2()?;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            let (r, pc) = pv.dims2()?;
            if pc != c {
                return Err(self.value(*first).mismatch("concat_rows", pv));
            }
            rows += r;
            data.extend_from_slice(pv.data());
        }
        let out = Tensor::new(vec![rows, c], data)?;
        self.push("concat_rows", out, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        if len == 0 || start + len > c {
            return Err(TensorError::Contract(format!(
                "slice_cols {start}..{} out of range for {c} cols",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(r * len);
        for row in xv.data().chunks(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        let out = Tensor::new(vec![r, len], data)?;
        self.push("slice_cols", out, Op::SliceCols { x, start }, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat_cols of nothing".into()))?;
        let (r, _) = self.value(*first).dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let pv = self.value(p);
            let (pr, pc) = pv.dims2()?;
            if pr != r {
                return Err(self.value(*first).mismatch("concat_cols", pv));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::new(vec![r, total], data)?;
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        self.push("reshape", out, Op::Reshape(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let out = Tensor::scalar(xv.sum() / F::lit(xv.len() as f64));
        self.push("mean", out, Op::Mean(x), &[x])
    }

    /// Mean softmax cross-entropy of each logit row against its target column.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (r, c) = lv.dims2()?;
        if targets.len() != r || targets.iter().any(|&t| t >= c) {
            return Err(TensorError::Contract(format!(
                "cross_entropy targets {targets:?} do not fit logits {:?}",
                lv.shape()
            )));
        }
        let mut total = F::zero();
        for (row, &t) in lv.data().chunks(c).zip(targets) {
            let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
            let lse = row.iter().fold(F::zero(), |a, &v| a + (v - max).exp()).ln() + max;
            total = total + lse - row[t];
        }
        let out = Tensor::scalar(total / F::lit(r as f64));
        self.push(
            "cross_entropy",
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        )
    }

    /// Records an externally defined differentiable operation whose forward
    /// value has already been computed.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        output: Tensor<F>,
        op: Box<dyn CustomOp<F>>,
    ) -> Result<Var> {
        let name = op.name();
        self.push(
            name,
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            inputs,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), F::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self
                .nodes
                .iter()
                .map(|n| n.value.shape().to_vec())
                .collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<F>>], v: Var, g: Tensor<F>) -> Result<()> {
        if !self.nodes[v.0].requires_grad {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(
        &self,
        node: &Node<F>,
        g: &Tensor<F>,
        grads: &mut [Option<Tensor<F>>],
    ) -> Result<()> {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = av.dims2()?;
                let (_, n) = bv.dims2()?;
                if self.nodes[a.0].requires_grad {
                    let mut ga = vec![F::zero(); m * k];
                    matmul_nt(g.data(), bv.data(), &mut ga, m, n, k);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], ga)?)?;
                }
                if self.nodes[b.0].requires_grad {
                    let mut gb = vec![F::zero(); k * n];
                    matmul_tn(av.data(), g.data(), &mut gb, m, k, n);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], gb)?)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone())?;
                self.accumulate(grads, *b, g.map(|v| -v))?;
            }
            Op::Mul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.nodes[a.0].requires_grad {
                    self.accumulate(grads, *a, g.zip_map(bv, "mul", |x, y| x * y)?)?;
                }
                if self.nodes[b.0].requires_grad {
                    self.accumulate(grads, *b, g.zip_map(av, "mul", |x, y| x * y)?)?;
                }
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, g.clone())?;
                if self.nodes[row.0].requires_grad {
                    let rv = self.value(*row);
                    let c = rv.len();
                    let mut gr = vec![F::zero(); c];
                    for chunk in g.data().chunks(c) {
                        for (o, &v) in gr.iter_mut().zip(chunk) {
                            *o = *o + v;
                        }
                    }
                    self.accumulate(grads, *row, Tensor::new(rv.shape().to_vec(), gr)?)?;
                }
            }
            Op::Scale(x, s) => {
                let s = *s;
                self.accumulate(grads, *x, g.map(|v| v * s))?;
            }
            Op::Transpose(x) => {
                self.accumulate(grads, *x, g.transpose()?)?;
            }
            Op::Softmax(x) => {
                let (_, c) = out.dims2()?;
                let mut gx = g.clone();
                for (gr, yr) in gx.data_mut().chunks_mut(c).zip(out.data().chunks(c)) {
                    let dot = gr
                        .iter()
                        .zip(yr)
                        .fold(F::zero(), |a, (&gv, &yv)| a + gv * yv);
                    for (gv, &yv) in gr.iter_mut().zip(yr) {
                        *gv = yv * (*gv - dot);
                    }
                }
                self.accumulate(grads, *x, gx)?;
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let (_, c) = xv.dims2()?;
                let cf = F::lit(c as f64);
                let mut gx = vec![F::zero(); xv.len()];
                let mut ggain = vec![F::zero(); c];
                let mut gbias = vec![F::zero(); c];
                for ((xr, gr), gxr) in xv
                    .data()
                    .chunks(c)
                    .zip(g.data().chunks(c))
                    .zip(gx.chunks_mut(c))
                {
                    let (mean, inv_std) = row_stats(xr, *eps);
                    let mut sum_d = F::zero();
                    let mut sum_dx = F::zero();
                    for i in 0..c {
                        let xhat = (xr[i] - mean) * inv_std;
                        let d = gr[i] * gv.data()[i];
                        ggain[i] = ggain[i] + gr[i] * xhat;
                        gbias[i] = gbias[i] + gr[i];
                        sum_d = sum_d + d;
                        sum_dx = sum_dx + d * xhat;
                    }
                    let mean_d = sum_d / cf;
                    let mean_dx = sum_dx / cf;
                    for i in 0..c {
                        let xhat = (xr[i] - mean) * inv_std;
                        let d = gr[i] * gv.data()[i];
                        gxr[i] = inv_std * (d - mean_d - xhat * mean_dx);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), gx)?)?;
                let gshape = gv.shape().to_vec();
                self.accumulate(grads, *gain, Tensor::new(gshape.clone(), ggain)?)?;
                self.accumulate(grads, *bias, Tensor::new(gshape, gbias)?)?;
            }
            Op::Gelu(x) => {
                let gx = self
                    .value(*x)
                    .zip_map(g, "gelu", |v, gv| gv * gelu_grad(v))?;
                self.accumulate(grads, *x, gx)?;
            }
            Op::Relu(x) => {
                let gx = self.value(*x).zip_map(g, "relu", |v, gv| {
                    if v > F::zero() {
                        gv
                    } else {
                        F::zero()
                    }
                })?;
                self.accumulate(grads, *x, gx)?;
            }
            Op::Tanh(x) => {
                let gx = out.zip_map(g, "tanh", |y, gv| gv * (F::one() - y * y))?;
                self.accumulate(grads, *x, gx)?;
            }
            Op::Square(x) => {
                let two = F::lit(2.0);
                let gx = self.value(*x).zip_map(g, "square", |v, gv| two * v * gv)?;
                self.accumulate(grads, *x, gx)?;
            }
            Op::NormalizeRows { x, eps } => {
                let xv = self.value(*x);
                let (_, c) = xv.dims2()?;
                let mut gx = vec![F::zero(); xv.len()];
                for ((yr, gr), (xr, gxr)) in out
                    .data()
                    .chunks(c)
                    .zip(g.data().chunks(c))
                    .zip(xv.data().chunks(c).zip(gx.chunks_mut(c)))
                {
                    let norm = (xr.iter().fold(F::zero(), |a, &v| a + v * v) + *eps).sqrt();
                    let dot = gr
                        .iter()
                        .zip(yr)
                        .fold(F::zero(), |a, (&gv, &yv)| a + gv * yv);
                    for i in 0..c {
                        gxr[i] = (gr[i] - yr[i] * dot) / norm;
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), gx)?)?;
            }
            Op::SliceRows { x, start } => {
                let xv = self.value(*x);
                let (_, c) = xv.dims2()?;
                let mut gx = Tensor::zeros(xv.shape());
                gx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *x, gx)?;
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let piece = Tensor::new(
                        pv.shape().to_vec(),
                        g.data()[offset..offset + pv.len()].to_vec(),
                    )?;
                    offset += pv.len();
                    self.accumulate(grads, p, piece)?;
                }
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let (_, c) = xv.dims2()?;
                let (_, w) = g.dims2()?;
                let mut gx = Tensor::zeros(xv.shape());
                for (dst, src) in gx.data_mut().chunks_mut(c).zip(g.data().chunks(w)) {
                    dst[*start..start + w].copy_from_slice(src);
                }
                self.accumulate(grads, *x, gx)?;
            }
            Op::ConcatCols(parts) => {
                let (r, total) = g.dims2()?;
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let (_, w) = pv.dims2()?;
                    let mut piece = Vec::with_capacity(r * w);
                    for row in g.data().chunks(total) {
                        piece.extend_from_slice(&row[offset..offset + w]);
                    }
                    offset += w;
                    self.accumulate(grads, p, Tensor::new(vec![r, w], piece)?)?;
                }
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, g.reshape(&shape)?)?;
            }
            Op::Sum(x) => {
                let gv = g.item();
                self.accumulate(grads, *x, Tensor::full(self.value(*x).shape(), gv))?;
            }
            Op::Mean(x) => {
                let xv = self.value(*x);
                let gv = g.item() / F::lit(xv.len() as f64);
                self.accumulate(grads, *x, Tensor::full(xv.shape(), gv))?;
            }
            Op::CrossEntropy { logits, targets } => {
                let lv = self.value(*logits);
                let (r, c) = lv.dims2()?;
                let scale = g.item() / F::lit(r as f64);
                let mut gl = lv.clone();
                for (row, &t) in gl.data_mut().chunks_mut(c).zip(targets) {
                    let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
                    let mut total = F::zero();
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        total = total + *v;
                    }
                    for v in row.iter_mut() {
                        *v = *v / total;
                    }
                    row[t] = row[t] - F::one();
                    for v in row.iter_mut() {
                        *v = *v * scale;
                    }
                }
                self.accumulate(grads, *logits, gl)?;
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor<F>> = inputs.iter().map(|v| self.value(*v)).collect();
                let gin = op.backward(&values, out, g);
                if gin.len() != inputs.len() {
                    return Err(TensorError::Contract(format!(
                        "{} returned {} gradients for {} inputs",
                        op.name(),
                        gin.len(),
                        inputs.len()
                    )));
                }
                for (&v, gi) in inputs.iter().zip(gin) {
                    self.value(v).check_same(op.name(), &gi)?;
                    self.accumulate(grads, v, gi)?;
                }
            }
        }
        Ok(())
    }
}

fn row_stats<F: Real>(row: &[F], eps: F) -> (F, F) {
    let n = F::lit(row.len() as f64);
    let mean = row.iter().fold(F::zero(), |a, &v| a + v) / n;
    let var = row
        .iter()
        .fold(F::zero(), |a, &v| a + (v - mean) * (v - mean))
        / n;
    (mean, F::one() / (var + eps).sqrt())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu_fwd<F: Real>(x: F) -> F {
    let c = F::lit(GELU_C);
    let inner = c * (x + F::lit(0.044715) * x * x * x);
    F::lit(0.5) * x * (F::one() + inner.tanh())
}

fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::lit(GELU_C);
    let inner = c * (x + F::lit(0.044715) * x * x * x);
    let t = inner.tanh();
    let dinner = c * (F::one() + F::lit(3.0 * 0.044715) * x * x);
    F::lit(0.5) * (F::one() + t) + F::lit(0.5) * x * (F::one() - t * t) * dinner
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.wrt(x).item(), 6.0);
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let v = tape.param(Tensor::new(vec![1, 5], vec![0.3, -1.2, 2.0, 0.0, 0.7]).unwrap());
        let s = tape.softmax(v).unwrap();
        let total = tape.sum(s).unwrap();
        let g = tape.backward(total).unwrap().wrt(v);
        assert!(g.data().iter().all(|x| x.abs() < 1e-12), "{g:?}");
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::<f32>::new();
        let v = tape.param(Tensor::zeros(&[2, 2]));
        assert!(matches!(
            tape.backward(v),
            Err(TensorError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let mut tape = Tape::<f32>::new();
        let a = tape.param(Tensor::scalar(2.0));
        let unused = tape.param(Tensor::zeros(&[3, 2]));
        let y = tape.square(a).unwrap();
        let grads = tape.backward(y).unwrap();
        assert_eq!(grads.wrt(unused), Tensor::zeros(&[3, 2]));
    }

    #[test]
    fn softmax_large_inputs_stay_finite() {
        let mut tape = Tape::<f32>::new();
        let v = tape.param(Tensor::new(vec![1, 3], vec![1e4, 1e4 - 1.0, -1e4]).unwrap());
        let s = tape.softmax(v).unwrap();
        assert!(tape.value(s).is_finite());
    }

    #[test]
    fn layer_norm_constant_row_is_finite() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::full(&[2, 4], 5.0));
        let g = tape.param(Tensor::full(&[4], 1.0));
        let b = tape.param(Tensor::zeros(&[4]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        let s = tape.sum(y).unwrap();
        assert!(tape.backward(s).unwrap().wrt(x).is_finite());
    }
}
