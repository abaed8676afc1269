use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;

use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};
use crate::params::{Gradients, ParamId, ParamStore};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Relu(Var),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GatherRows(Var, Rc<[usize]>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherIndex(Var, Rc<[usize]>),
    ScatterIndex(Var, Rc<[usize]>),
    MaxPoolRows(Var, Vec<usize>),
    Dropout(Var, Vec<f64>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Eagerly evaluated computation tape.
///
/// Every operation computes its value immediately and records how to
/// propagate gradients. [`Graph::backward`] walks the tape in reverse
/// creation order, which is a reverse topological order by construction.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    params: HashMap<ParamId, Var>,
}

const LN_EPS: f64 = 1e-5;

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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a stored parameter, reusing the node if it was bound before.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.variable(store.get(id).clone());
        self.params.insert(id, v);
        v
    }

    /// Binds a stored parameter without gradient tracking.
    pub fn frozen_param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.constant(store.get(id).clone());
        self.params.insert(id, v);
        v
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
    }

    fn mat(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        self.nodes[v.0].value.require_matrix(op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat(a, "matmul")?;
        let (k2, n) = self.mat(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.mat(a, "matmul_nt")?;
        let (n, k2) = self.mat(b, "matmul_nt")?;
        if k != k2 {
            return Err(Error::dim("matmul_nt", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMulNT(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", self.shape(a), self.shape(b)));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add(a, b), rg))
    }

    /// Adds a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.mat(a, "add_row")?;
        if self.value(bias).numel() != n {
            return Err(Error::dim("add_row", self.shape(a), self.shape(bias)));
        }
        let bv = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for (x, b) in data[i * n..(i + 1) * n].iter_mut().zip(bv) {
                *x += b;
            }
        }
        let rg = self.rg(&[a, bias]);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::AddRow(a, bias), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("mul", self.shape(a), self.shape(b)));
        }
        let data = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let mut t = self.value(a).clone();
        t.data_mut().iter_mut().for_each(|x| *x *= factor);
        let rg = self.rg(&[a]);
        self.push(t, Op::Scale(a, factor), rg)
    }

    /// Adds a non-differentiable tensor of the same shape (e.g. an attention mask).
    pub fn add_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        if self.shape(a) != c.shape() {
            return Err(Error::dim("add_const", self.shape(a), c.shape()));
        }
        let data = zip_map(self.value(a).data(), c.data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddConst(a), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        t.data_mut().iter_mut().for_each(|x| *x = x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(t, Op::Relu(a), rg)
    }

    fn check_axis(&self, a: Var, axis: usize, op: &'static str) -> Result<()> {
        let shape = self.shape(a);
        if axis >= shape.len() {
            return Err(Error::Index {
                context: op,
                index: axis,
                extent: shape.len(),
            });
        }
        Ok(())
    }

    /// Softmax along `axis`, stabilised by subtracting the maximum.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis, "softmax axis")?;
        let x = self.value(a);
        if !x.data().iter().all(|v| v.is_finite() || *v == f64::NEG_INFINITY) {
            return Err(Error::Numeric("softmax"));
        }
        let data = kernels::softmax_axis(x.data(), x.shape(), axis);
        let shape = x.shape().to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Softmax(a, axis), rg))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis, "log_softmax axis")?;
        let x = self.value(a);
        if !x.is_finite() {
            return Err(Error::Numeric("log_softmax"));
        }
        let data = kernels::log_softmax_axis(x.data(), x.shape(), axis);
        let shape = x.shape().to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::new(shape, data)?, Op::LogSoftmax(a, axis), rg))
    }

    /// Layer normalisation over the last axis with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.mat(x, "layer_norm")?;
        if self.value(gain).numel() != n || self.value(bias).numel() != n {
            return Err(Error::dim("layer_norm", self.shape(x), self.shape(gain)));
        }
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = h * g[j] + b[j];
            }
        }
        let rg = self.rg(&[x, gain, bias]);
        Ok(self.push(
            Tensor::matrix(m, n, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Selects rows of a matrix; doubles as embedding lookup.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let (rows, cols) = self.mat(table, "gather_rows")?;
        let t = self.value(table).data();
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            if i >= rows {
                return Err(Error::Index {
                    context: "gather_rows",
                    index: i,
                    extent: rows,
                });
            }
            data.extend_from_slice(&t[i * cols..(i + 1) * cols]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Tensor::matrix(idx.len(), cols, data)?,
            Op::GatherRows(table, idx.into()),
            rg,
        ))
    }

    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let (m, _) = self.mat(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = self.mat(p, "concat_cols")?;
            if pm != m {
                return Err(Error::dim("concat_cols", self.shape(first), self.shape(p)));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Contract("concat of nothing".into()))?;
        let (_, n) = self.mat(first, "concat_rows")?;
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            let (pm, pn) = self.mat(p, "concat_rows")?;
            if pn != n {
                return Err(Error::dim("concat_rows", self.shape(first), self.shape(p)));
            }
            data.extend_from_slice(self.value(p).data());
            m += pm;
        }
        let rg = self.rg(parts);
        Ok(self.push(Tensor::matrix(m, n, data)?, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = self.mat(x, "slice_cols")?;
        if start + len > n {
            return Err(Error::Index {
                context: "slice_cols",
                index: start + len,
                extent: n,
            });
        }
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&xv[i * n + start..i * n + start + len]);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::matrix(m, len, data)?, Op::SliceCols(x, start), rg))
    }

    /// `out[i][j] = x[i][idx[i·width + j]]` for an `m×c` input, producing `m×width`.
    pub fn gather_index(&mut self, x: Var, idx: Rc<[usize]>, width: usize) -> Result<Var> {
        let (m, c) = self.mat(x, "gather_index")?;
        if idx.len() != m * width {
            return Err(Error::dim("gather_index", &[m, width], &[idx.len()]));
        }
        if let Some(&bad) = idx.iter().find(|&&k| k >= c) {
            return Err(Error::Index {
                context: "gather_index",
                index: bad,
                extent: c,
            });
        }
        let xv = self.value(x).data();
        let data = (0..m * width).map(|p| xv[(p / width) * c + idx[p]]).collect();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::matrix(m, width, data)?, Op::GatherIndex(x, idx), rg))
    }

    /// Adjoint of [`Graph::gather_index`]: `out[i][idx[i·n + j]] += x[i][j]`, producing `m×cols`.
    pub fn scatter_index(&mut self, x: Var, idx: Rc<[usize]>, cols: usize) -> Result<Var> {
        let (m, n) = self.mat(x, "scatter_index")?;
        if idx.len() != m * n {
            return Err(Error::dim("scatter_index", &[m, n], &[idx.len()]));
        }
        if let Some(&bad) = idx.iter().find(|&&k| k >= cols) {
            return Err(Error::Index {
                context: "scatter_index",
                index: bad,
                extent: cols,
            });
        }
        let xv = self.value(x).data();
        let mut data = vec![0.0; m * cols];
        for p in 0..m * n {
            data[(p / n) * cols + idx[p]] += xv[p];
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::matrix(m, cols, data)?, Op::ScatterIndex(x, idx), rg))
    }

    /// Element-wise maximum over the row axis, producing a `1×n` matrix.
    pub fn max_pool_rows(&mut self, x: Var) -> Result<Var> {
        let (m, n) = self.mat(x, "max_pool_rows")?;
        if m == 0 {
            return Err(Error::Contract("max-pool over an empty sequence".into()));
        }
        let xv = self.value(x).data();
        let mut arg = vec![0usize; n];
        let mut data = xv[..n].to_vec();
        for i in 1..m {
            for j in 0..n {
                if xv[i * n + j] > data[j] {
                    data[j] = xv[i * n + j];
                    arg[j] = i;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::matrix(1, n, data)?, Op::MaxPoolRows(x, arg), rg))
    }

    /// Inverted dropout. A rate of zero records an identity.
    pub fn dropout<R: Rng>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).numel())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = zip_map(self.value(x).data(), &mask, |a, b| a * b);
        let shape = self.shape(x).to_vec();
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(shape, data)?, Op::Dropout(x, mask), rg))
    }

    /// Mean negative log-softmax probability of `targets` over the rows of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (b, v) = self.mat(logits, "cross_entropy")?;
        if targets.len() != b {
            return Err(Error::dim("cross_entropy", &[b, v], &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::Index {
                context: "cross_entropy target",
                index: bad,
                extent: v,
            });
        }
        let x = self.value(logits);
        if !x.is_finite() {
            return Err(Error::Numeric("cross_entropy"));
        }
        let logp = kernels::log_softmax_axis(x.data(), x.shape(), 1);
        let loss = -targets
            .iter()
            .enumerate()
            .map(|(i, &t)| logp[i * v + t])
            .sum::<f64>()
            / b as f64;
        let probs = logp.iter().map(|l| l.exp()).collect();
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Reverse-mode sweep seeded with ones at `out`.
    pub fn backward(&mut self, out: Var) {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0; self.nodes[out.0].value.numel()]);
        for id in (0..=out.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        for (id, g) in grads.iter_mut().enumerate() {
            if !self.nodes[id].requires_grad {
                *g = None;
            }
        }
        self.grads = grads;
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[1];
                if rg(*a) {
                    accumulate(grads, *a, &kernels::matmul_nt(g, val(*b).data(), m, n, k));
                }
                if rg(*b) {
                    accumulate(grads, *b, &kernels::matmul_tn(val(*a).data(), g, m, k, n));
                }
            }
            Op::MatMulNT(a, b) => {
                let (m, k) = (val(*a).shape()[0], val(*a).shape()[1]);
                let n = val(*b).shape()[0];
                if rg(*a) {
                    accumulate(grads, *a, &kernels::matmul(g, val(*b).data(), m, n, k));
                }
                if rg(*b) {
                    accumulate(grads, *b, &kernels::matmul_tn(g, val(*a).data(), m, n, k));
                }
            }
            Op::Add(a, b) => {
                if rg(*a) {
                    accumulate(grads, *a, g);
                }
                if rg(*b) {
                    accumulate(grads, *b, g);
                }
            }
            Op::AddRow(a, bias) => {
                if rg(*a) {
                    accumulate(grads, *a, g);
                }
                if rg(*bias) {
                    let n = val(*bias).numel();
                    let mut gb = vec![0.0; n];
                    for row in g.chunks(n) {
                        gb.iter_mut().zip(row).for_each(|(s, r)| *s += r);
                    }
                    accumulate(grads, *bias, &gb);
                }
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    accumulate(grads, *a, &zip_map(g, val(*b).data(), |x, y| x * y));
                }
                if rg(*b) {
                    accumulate(grads, *b, &zip_map(g, val(*a).data(), |x, y| x * y));
                }
            }
            Op::Scale(a, f) => {
                let ga: Vec<f64> = g.iter().map(|x| x * f).collect();
                accumulate(grads, *a, &ga);
            }
            Op::AddConst(a) => accumulate(grads, *a, g),
            Op::Relu(a) => {
                let ga = zip_map(g, val(*a).data(), |gv, x| if x > 0.0 { gv } else { 0.0 });
                accumulate(grads, *a, &ga);
            }
            Op::Softmax(a, axis) => {
                let y = node.value.data();
                let (outer, len, inner) = kernels::axis_split(node.value.shape(), *axis);
                let mut ga = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let dot: f64 = (0..len).map(|k| g[idx(k)] * y[idx(k)]).sum();
                        for k in 0..len {
                            ga[idx(k)] = y[idx(k)] * (g[idx(k)] - dot);
                        }
                    }
                }
                accumulate(grads, *a, &ga);
            }
            Op::LogSoftmax(a, axis) => {
                let y = node.value.data();
                let (outer, len, inner) = kernels::axis_split(node.value.shape(), *axis);
                let mut ga = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |k: usize| (o * len + k) * inner + i;
                        let gs: f64 = (0..len).map(|k| g[idx(k)]).sum();
                        for k in 0..len {
                            ga[idx(k)] = g[idx(k)] - y[idx(k)].exp() * gs;
                        }
                    }
                }
                accumulate(grads, *a, &ga);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = val(*gain).numel();
                let m = inv_std.len();
                let gv = val(*gain).data();
                if rg(*x) {
                    let mut gx = vec![0.0; m * n];
                    for i in 0..m {
                        let r = i * n..(i + 1) * n;
                        let dh: Vec<f64> = g[r.clone()].iter().zip(gv).map(|(a, b)| a * b).collect();
                        let mean_dh = dh.iter().sum::<f64>() / n as f64;
                        let mean_dhx = dh.iter().zip(&xhat[r.clone()]).map(|(a, b)| a * b).sum::<f64>()
                            / n as f64;
                        for j in 0..n {
                            gx[i * n + j] = inv_std[i] * (dh[j] - mean_dh - xhat[i * n + j] * mean_dhx);
                        }
                    }
                    accumulate(grads, *x, &gx);
                }
                if rg(*gain) {
                    let mut gg = vec![0.0; n];
                    for (p, (gv, h)) in g.iter().zip(xhat).enumerate() {
                        gg[p % n] += gv * h;
                    }
                    accumulate(grads, *gain, &gg);
                }
                if rg(*bias) {
                    let mut gb = vec![0.0; n];
                    for (p, gv) in g.iter().enumerate() {
                        gb[p % n] += gv;
                    }
                    accumulate(grads, *bias, &gb);
                }
            }
            Op::GatherRows(table, idx) => {
                let cols = val(*table).cols();
                let mut gt = vec![0.0; val(*table).numel()];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..cols {
                        gt[i * cols + j] += g[r * cols + j];
                    }
                }
                accumulate(grads, *table, &gt);
            }
            Op::ConcatCols(parts) => {
                let m = node.value.rows();
                let n = node.value.cols();
                let mut off = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if rg(p) {
                        let mut gp = Vec::with_capacity(m * w);
                        for i in 0..m {
                            gp.extend_from_slice(&g[i * n + off..i * n + off + w]);
                        }
                        accumulate(grads, p, &gp);
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = val(p).numel();
                    if rg(p) {
                        accumulate(grads, p, &g[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::SliceCols(x, start) => {
                let (m, n) = (val(*x).rows(), val(*x).cols());
                let w = node.value.cols();
                let mut gx = vec![0.0; m * n];
                for i in 0..m {
                    gx[i * n + start..i * n + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                accumulate(grads, *x, &gx);
            }
            Op::GatherIndex(x, idx) => {
                let c = val(*x).cols();
                let w = node.value.cols();
                let mut gx = vec![0.0; val(*x).numel()];
                for (p, gv) in g.iter().enumerate() {
                    gx[(p / w) * c + idx[p]] += gv;
                }
                accumulate(grads, *x, &gx);
            }
            Op::ScatterIndex(x, idx) => {
                let n = val(*x).cols();
                let c = node.value.cols();
                let gx: Vec<f64> = (0..val(*x).numel()).map(|p| g[(p / n) * c + idx[p]]).collect();
                accumulate(grads, *x, &gx);
            }
            Op::MaxPoolRows(x, arg) => {
                let n = arg.len();
                let mut gx = vec![0.0; val(*x).numel()];
                for (j, &i) in arg.iter().enumerate() {
                    gx[i * n + j] += g[j];
                }
                accumulate(grads, *x, &gx);
            }
            Op::Dropout(x, mask) => accumulate(grads, *x, &zip_map(g, mask, |a, b| a * b)),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let b = targets.len();
                let v = probs.len() / b.max(1);
                let scale = g[0] / b as f64;
                let mut gl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &t) in targets.iter().enumerate() {
                    gl[i * v + t] -= scale;
                }
                accumulate(grads, *logits, &gl);
            }
            Op::Sum(x) => {
                let gx = vec![g[0]; val(*x).numel()];
                accumulate(grads, *x, &gx);
            }
        }
    }

    /// Collects gradients of every bound parameter after [`Graph::backward`].
    pub fn param_grads(&self, store: &ParamStore) -> Gradients {
        let mut out = Gradients::empty(store.len());
        for (&id, &v) in &self.params {
            if let Some(g) = self.grad(v) {
                let t = Tensor::new(store.get(id).shape().to_vec(), g.to_vec())
                    .expect("gradient shape matches its parameter");
                out.set(id, t);
            }
        }
        out
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}
