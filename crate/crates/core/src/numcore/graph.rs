//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every forward operation as a node holding its value.
//! [`Graph::gradients`] walks the tape backwards once and returns the
//! gradient of a scalar with respect to every parameter leaf that reached it.

use std::collections::HashMap;

use super::param::{Gradients, ParamId, ParamStore};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Derivative of `acos` is evaluated at no more than this magnitude.
pub const ACOS_GRAD_CLIP: f64 = 1.0 - 1e-7;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Softmax(Var),
    Relu(Var),
    Softplus(Var),
    Sqrt(Var),
    Abs(Var),
    AcosClipped(Var),
    MeanLast(Var),
    SumAll(Var),
    MeanAll(Var),
    Concat { parts: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Transpose(Var),
    Roll { x: Var, shift: isize },
    Gather { table: Var, index: Vec<usize> },
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ))
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn transpose2(t: &Tensor) -> Tensor {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    let src = t.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out).expect("transpose shape")
}

/// Circular shift along axis 0: `out[i] = x[(i - shift) mod n]`.
fn roll_axis0(t: &Tensor, shift: isize) -> Tensor {
    let n = t.shape().first().copied().unwrap_or(1);
    let block = t.len() / n;
    let s = shift.rem_euclid(n as isize) as usize;
    let src = t.data();
    let mut out = vec![0.0; t.len()];
    for i in 0..n {
        let from = (i + n - s) % n;
        out[i * block..(i + 1) * block].copy_from_slice(&src[from * block..(from + 1) * block]);
    }
    Tensor::new(t.shape().to_vec(), out).expect("roll shape")
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push_checked(
        &mut self,
        name: &'static str,
        value: Tensor,
        op: Op,
        inputs: &[Var],
    ) -> Result<Var> {
        check_finite(name, &value)?;
        let needs = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push(value, op, needs))
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        check_finite("constant", &value)?;
        Ok(self.push(value, Op::Constant, false))
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param(id), true);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", ta.shape(), tb.shape()),
            ));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, 0.0, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        self.push_checked("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push_checked(name, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    fn row_broadcast(
        &mut self,
        name: &'static str,
        a: Var,
        row: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.len() != ta.cols() {
            return Err(Error::shape(
                name,
                format!("row of {} against {:?}", tr.len(), ta.shape()),
            ));
        }
        let c = ta.cols();
        let r = tr.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, r[i % c]))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push_checked(name, value, op, &[a, row])
    }

    /// Adds a trailing-dimension vector to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("add_row", a, row, |x, y| x + y, Op::AddRow(a, row))
    }

    /// Multiplies every row elementwise by a trailing-dimension vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast("mul_row", a, row, |x, y| x * y, Op::MulRow(a, row))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let value = self.value(a).map(f);
        self.push_checked(name, value, op, &[a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("scale", a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary("add_scalar", a, |x| x + c, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary("softplus", a, softplus, Op::Softplus(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary("sqrt", a, f64::sqrt, Op::Sqrt(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary("abs", a, f64::abs, Op::Abs(a))
    }

    /// `acos` of the input clamped to `[-1, 1]`.
    pub fn acos_clipped(&mut self, a: Var) -> Result<Var> {
        self.unary("acos", a, |x| x.clamp(-1.0, 1.0).acos(), Op::AcosClipped(a))
    }

    /// Normalizes each row to zero mean and unit variance (no affine terms).
    pub fn layer_norm(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        let mut out = vec![0.0; t.len()];
        let mut inv_std = Vec::with_capacity(t.rows());
        for (r, row) in t.data().chunks(c).enumerate() {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, x) in out[r * c..(r + 1) * c].iter_mut().zip(row) {
                *o = (x - mean) * is;
            }
            inv_std.push(is);
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        self.push_checked("layer_norm", value, Op::LayerNorm { x: a, inv_std }, &[a])
    }

    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let value = Tensor::new(t.shape().to_vec(), out)?;
        self.push_checked("softmax", value, Op::Softmax(a), &[a])
    }

    /// Mean over the trailing dimension; the trailing extent is dropped.
    pub fn mean_lastdim(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let c = t.cols();
        let data: Vec<f64> = t
            .data()
            .chunks(c)
            .map(|row| row.iter().sum::<f64>() / c as f64)
            .collect();
        let shape = t.shape()[..t.shape().len().saturating_sub(1)].to_vec();
        let value = Tensor::new(shape, data)?;
        self.push_checked("mean_lastdim", value, Op::MeanLast(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push_checked("sum", Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push_checked("mean", Tensor::scalar(s), Op::MeanAll(a), &[a])
    }

    /// Concatenates 1-D or 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let rank = self.value(*first).shape().len();
        if rank == 0 || rank > 2 || axis >= rank {
            return Err(Error::shape(
                "concat",
                format!("axis {axis} of rank {rank}"),
            ));
        }
        let value = if axis == 0 {
            let tail = self.value(*first).shape()[1..].to_vec();
            let mut data = Vec::new();
            let mut rows = 0;
            for &p in parts {
                let t = self.value(p);
                if t.shape().len() != rank || t.shape()[1..] != tail[..] {
                    return Err(Error::shape("concat", format!("{:?}", t.shape())));
                }
                rows += t.shape()[0];
                data.extend_from_slice(t.data());
            }
            let mut shape = vec![rows];
            shape.extend(tail);
            Tensor::new(shape, data)?
        } else {
            let rows = self.value(*first).shape()[0];
            let mut widths = Vec::with_capacity(parts.len());
            for &p in parts {
                let t = self.value(p);
                if t.shape().len() != 2 || t.shape()[0] != rows {
                    return Err(Error::shape("concat", format!("{:?}", t.shape())));
                }
                widths.push(t.shape()[1]);
            }
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &p in parts {
                    data.extend_from_slice(self.value(p).row(r));
                }
            }
            Tensor::new(vec![rows, total], data)?
        };
        let op = Op::Concat {
            parts: parts.to_vec(),
            axis,
        };
        self.push_checked("concat", value, op, parts)
    }

    /// Contiguous range `[start, start + len)` along `axis` of a 1-D or 2-D tensor.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let shape = t.shape();
        if shape.is_empty() || shape.len() > 2 || axis >= shape.len() {
            return Err(Error::shape("slice", format!("axis {axis} of {shape:?}")));
        }
        if len == 0 || start + len > shape[axis] {
            return Err(Error::shape(
                "slice",
                format!("[{start}, {}) of extent {}", start + len, shape[axis]),
            ));
        }
        let value = if axis == 0 {
            let block = t.len() / shape[0];
            let mut s = shape.to_vec();
            s[0] = len;
            Tensor::new(s, t.data()[start * block..(start + len) * block].to_vec())?
        } else {
            let mut data = Vec::with_capacity(shape[0] * len);
            for r in 0..shape[0] {
                data.extend_from_slice(&t.row(r)[start..start + len]);
            }
            Tensor::new(vec![shape[0], len], data)?
        };
        self.push_checked("slice", value, Op::Slice { x: a, axis, start }, &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape().len() != 2 {
            return Err(Error::shape("transpose", format!("{:?}", t.shape())));
        }
        let value = transpose2(t);
        self.push_checked("transpose", value, Op::Transpose(a), &[a])
    }

    /// Circular shift along axis 0: `out[i] = x[(i - shift) mod n]`.
    pub fn roll(&mut self, a: Var, shift: isize) -> Result<Var> {
        let value = roll_axis0(self.value(a), shift);
        self.push_checked("roll", value, Op::Roll { x: a, shift }, &[a])
    }

    /// `out.flat[i] = table.flat[index[i]]`, shaped as `shape`.
    pub fn gather(&mut self, table: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = index.iter().find(|&&i| i >= t.len()) {
            return Err(Error::shape(
                "gather",
                format!("index {bad} out of {}", t.len()),
            ));
        }
        let data = index.iter().map(|&i| t.data()[i]).collect();
        let value = Tensor::new(shape.to_vec(), data)?;
        self.push_checked("gather", value, Op::Gather { table, index }, &[table])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(shape)?;
        self.push_checked("reshape", value, Op::Reshape(a), &[a])
    }

    /// Gradient of the scalar `loss` with respect to every parameter leaf.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if !lt.is_scalar() {
            return Err(Error::NotScalar(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            check_finite("backward", &g)?;
            self.backprop(node, &g, &mut grads, &mut out)?;
        }
        out.entries.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    /// Runs [`Graph::gradients`] and adds the result into `store`'s grads.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        store.accumulate(&grads, 1.0)
    }

    fn backprop(
        &self,
        node: &Node,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        out: &mut Gradients,
    ) -> Result<()> {
        let mut acc = |v: Var, delta: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign_scaled(&delta, 1.0),
                slot @ None => *slot = Some(delta),
            }
        };
        let gd = g.data();
        match &node.op {
            Op::Constant => {}
            Op::Param(id) => out.entries.push((*id, g.clone())),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.needs(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, tb.data(), true, 0.0, &mut da);
                    acc(*a, Tensor::new(vec![m, k], da)?);
                }
                if self.needs(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, gd, false, 0.0, &mut db);
                    acc(*b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, zip_map(g, tb, |g, y| g * y));
                acc(*b, zip_map(g, ta, |g, x| g * x));
            }
            Op::Div(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                acc(*a, zip_map(g, tb, |g, y| g / y));
                let db = gd
                    .iter()
                    .zip(ta.data().iter().zip(tb.data()))
                    .map(|(g, (x, y))| -g * x / (y * y))
                    .collect();
                acc(*b, Tensor::new(tb.shape().to_vec(), db)?);
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                let tr = self.value(*row);
                acc(*row, Tensor::new(tr.shape().to_vec(), column_sums(g))?);
            }
            Op::MulRow(a, row) => {
                let (ta, tr) = (self.value(*a), self.value(*row));
                let c = tr.len();
                let rd = tr.data();
                let da = gd.iter().enumerate().map(|(i, g)| g * rd[i % c]).collect();
                acc(*a, Tensor::new(ta.shape().to_vec(), da)?);
                let prod = zip_map(g, ta, |g, x| g * x);
                acc(*row, Tensor::new(tr.shape().to_vec(), column_sums(&prod))?);
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| c * x)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::LayerNorm { x, inv_std } => {
                let y = node.value.data();
                let c = node.value.cols();
                let mut dx = vec![0.0; y.len()];
                for (r, is) in inv_std.iter().enumerate() {
                    let range = r * c..(r + 1) * c;
                    let (gr, yr) = (&gd[range.clone()], &y[range.clone()]);
                    let mg = gr.iter().sum::<f64>() / c as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for ((d, gi), yi) in dx[range].iter_mut().zip(gr).zip(yr) {
                        *d = is * (gi - mg - yi * mgy);
                    }
                }
                acc(*x, Tensor::new(node.value.shape().to_vec(), dx)?);
            }
            Op::Softmax(a) => {
                let y = node.value.data();
                let c = node.value.cols();
                let mut dx = vec![0.0; y.len()];
                for ((d, gr), yr) in dx.chunks_mut(c).zip(gd.chunks(c)).zip(y.chunks(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((di, gi), yi) in d.iter_mut().zip(gr).zip(yr) {
                        *di = yi * (gi - dot);
                    }
                }
                acc(*a, Tensor::new(node.value.shape().to_vec(), dx)?);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                acc(*a, zip_map(g, x, |g, x| if x > 0.0 { g } else { 0.0 }));
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                acc(*a, zip_map(g, x, |g, x| g * sigmoid(x)));
            }
            Op::Sqrt(a) => {
                acc(*a, zip_map(g, &node.value, |g, y| g / (2.0 * y)));
            }
            Op::Abs(a) => {
                let x = self.value(*a);
                acc(*a, zip_map(g, x, |g, x| g * sign0(x)));
            }
            Op::AcosClipped(a) => {
                let x = self.value(*a);
                acc(
                    *a,
                    zip_map(g, x, |g, x| {
                        let c = x.clamp(-ACOS_GRAD_CLIP, ACOS_GRAD_CLIP);
                        -g / (1.0 - c * c).sqrt()
                    }),
                );
            }
            Op::MeanLast(a) => {
                let x = self.value(*a);
                let c = x.cols();
                let dx = (0..x.len()).map(|i| gd[i / c] / c as f64).collect();
                acc(*a, Tensor::new(x.shape().to_vec(), dx)?);
            }
            Op::SumAll(a) => {
                let x = self.value(*a);
                acc(*a, Tensor::full(x.shape(), gd[0]));
            }
            Op::MeanAll(a) => {
                let x = self.value(*a);
                acc(*a, Tensor::full(x.shape(), gd[0] / x.len() as f64));
            }
            Op::Concat { parts, axis } => {
                let mut offset = 0;
                for &p in parts {
                    let t = self.value(p);
                    let piece = if *axis == 0 {
                        let n = t.len();
                        let d = gd[offset..offset + n].to_vec();
                        offset += n;
                        d
                    } else {
                        let w = t.shape()[1];
                        let total = node.value.cols();
                        let mut d = Vec::with_capacity(t.len());
                        for r in 0..t.shape()[0] {
                            d.extend_from_slice(&gd[r * total + offset..r * total + offset + w]);
                        }
                        offset += w;
                        d
                    };
                    acc(p, Tensor::new(t.shape().to_vec(), piece)?);
                }
            }
            Op::Slice { x, axis, start } => {
                let t = self.value(*x);
                let mut dx = vec![0.0; t.len()];
                if *axis == 0 {
                    let block = t.len() / t.shape()[0];
                    dx[start * block..start * block + gd.len()].copy_from_slice(gd);
                } else {
                    let (w, len) = (t.shape()[1], node.value.shape()[1]);
                    for r in 0..t.shape()[0] {
                        dx[r * w + start..r * w + start + len]
                            .copy_from_slice(&gd[r * len..(r + 1) * len]);
                    }
                }
                acc(*x, Tensor::new(t.shape().to_vec(), dx)?);
            }
            Op::Transpose(a) => acc(*a, transpose2(g)),
            Op::Roll { x, shift } => acc(*x, roll_axis0(g, -shift)),
            Op::Gather { table, index } => {
                let t = self.value(*table);
                let mut dt = vec![0.0; t.len()];
                for (gi, &i) in gd.iter().zip(index) {
                    dt[i] += gi;
                }
                acc(*table, Tensor::new(t.shape().to_vec(), dt)?);
            }
            Op::Reshape(a) => {
                let x = self.value(*a);
                acc(*a, g.reshape(x.shape())?);
            }
        }
        Ok(())
    }
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(b.shape().to_vec(), data).expect("zip shape")
}

fn column_sums(t: &Tensor) -> Vec<f64> {
    let c = t.cols();
    let mut out = vec![0.0; c];
    for row in t.data().chunks(c) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let a = g
            .constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap())
            .unwrap();
        let i = g.constant(Tensor::identity(2)).unwrap();
        let c = g.matmul(a, i).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn softmax_uniform_and_softplus_zero() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::vector(vec![0.0; 3])).unwrap();
        let s = g.softmax_lastdim(z).unwrap();
        for &v in g.value(s).data() {
            assert!(close(v, 1.0 / 3.0, 1e-15));
        }
        let zero = g.constant(Tensor::scalar(0.0)).unwrap();
        let sp = g.softplus(zero).unwrap();
        assert!(close(g.value(sp).item(), std::f64::consts::LN_2, 1e-15));
    }

    #[test]
    fn softmax_handles_large_logits() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::vector(vec![1000.0, 1000.0])).unwrap();
        let s = g.softmax_lastdim(z).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
    }

    #[test]
    fn quadratic_gradient() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![1.0, 2.0, 3.0]));
        let mut g = Graph::new();
        let v = g.param(&store, p);
        let sq = g.mul(v, v).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(p).grad.data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![1.0, 2.0]));
        let mut g = Graph::new();
        let _ = g.param(&store, p);
        let c = g.constant(Tensor::scalar(4.0)).unwrap();
        let loss = g.scale(c, 2.0).unwrap();
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(p).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_is_additive() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![0.5, -1.5]));
        let mut g = Graph::new();
        let v = g.param(&store, p);
        let s = g.softplus(v).unwrap();
        let loss = g.sum(s).unwrap();
        g.backward(loss, &mut store).unwrap();
        let once = store.get(p).grad.clone();
        g.backward(loss, &mut store).unwrap();
        for (a, b) in store.get(p).grad.data().iter().zip(once.data()) {
            assert_eq!(*a, 2.0 * b);
        }
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![1.0, 2.0]));
        let mut g = Graph::new();
        let v = g.param(&store, p);
        assert!(matches!(
            g.backward(v, &mut store),
            Err(Error::NotScalar(_))
        ));
    }

    #[test]
    fn shape_mismatch_and_non_finite_are_errors() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        assert!(matches!(g.add(a, b), Err(Error::Shape { .. })));
        let z = g.constant(Tensor::vector(vec![0.0, 1.0])).unwrap();
        assert!(matches!(g.div(a, z), Err(Error::NonFinite { .. })));
        assert!(g.constant(Tensor::scalar(f64::NAN)).is_err());
    }

    #[test]
    fn roll_concat_slice_basics() {
        let mut g = Graph::new();
        let x = g
            .constant(Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]))
            .unwrap();
        let r = g.roll(x, 2).unwrap();
        assert_eq!(g.value(r).data(), &[3.0, 4.0, 1.0, 2.0]);
        let r1 = g.roll(x, 1).unwrap();
        assert_eq!(g.value(r1).data(), &[4.0, 1.0, 2.0, 3.0]);
        let s = g.slice(x, 0, 1, 2).unwrap();
        assert_eq!(g.value(s).data(), &[2.0, 3.0]);
        let m = g
            .constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap())
            .unwrap();
        let c = g.concat(&[m, m], 1).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 4]);
        assert_eq!(g.value(c).row(1), &[3.0, 4.0, 3.0, 4.0]);
        let col = g.slice(c, 1, 1, 2).unwrap();
        assert_eq!(g.value(col).data(), &[2.0, 1.0, 4.0, 3.0]);
    }

    #[test]
    fn acos_clamps_overshoot() {
        let mut store = ParamStore::new();
        let p = store.add("p", Tensor::vector(vec![1.0 + 1e-12, -1.0 - 1e-12]));
        let mut g = Graph::new();
        let v = g.param(&store, p);
        let a = g.acos_clipped(v).unwrap();
        assert_eq!(g.value(a).data()[0], 0.0);
        assert!(close(g.value(a).data()[1], std::f64::consts::PI, 0.0));
        let l = g.sum(a).unwrap();
        g.backward(l, &mut store).unwrap();
        assert!(store.get(p).grad.all_finite());
    }
}
