//! Reverse-mode differentiation over an arena of recorded operations.

use crate::ops::{self, PatchGrid};
use crate::{Error, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddTiled(Var, Var),
    MulTiled(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Sum(Var),
    Mean(Var),
    GroupMean(Var, usize),
    GroupSoftmax(Var, usize),
    Reshape(Var),
    SelectRows(Var, Vec<usize>),
    Conv(Var, Var),
    Patches(Var, PatchGrid),
    ChannelsLast(Var),
    BatchNorm { input: Var, inv_std: Vec<f64> },
    SqDist(Var, Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddTiled(..) => "add_tiled",
            Op::MulTiled(..) => "mul_tiled",
            Op::MulCol(..) => "mul_col",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Relu(_) => "relu",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softplus(_) => "softplus",
            Op::Exp(_) => "exp",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::GroupMean(..) => "group_mean",
            Op::GroupSoftmax(..) => "group_softmax",
            Op::Reshape(_) => "reshape",
            Op::SelectRows(..) => "select_rows",
            Op::Conv(..) => "conv_nonoverlap",
            Op::Patches(..) => "patches",
            Op::ChannelsLast(_) => "channels_last",
            Op::BatchNorm { .. } => "batch_normalize",
            Op::SqDist(..) => "sq_dist",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddTiled(a, b)
            | Op::MulTiled(a, b)
            | Op::MulCol(a, b)
            | Op::Conv(a, b)
            | Op::SqDist(a, b) => vec![a, b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softplus(a)
            | Op::Exp(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::GroupMean(a, _)
            | Op::GroupSoftmax(a, _)
            | Op::Reshape(a)
            | Op::SelectRows(a, _)
            | Op::Patches(a, _)
            | Op::ChannelsLast(a)
            | Op::BatchNorm { input: a, .. } => vec![a],
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    finite: bool,
}

/// Records forward operations so gradients of a scalar output can be
/// computed with respect to any recorded value.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar output, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the output does not depend on `v`.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Result<Tensor> {
        self.grads
            .get_mut(v.0)
            .and_then(Option::take)
            .ok_or(Error::Detached(v.0))
    }
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

    pub fn leaf(&mut self, value: Tensor) -> Var {
        let finite = value.is_finite();
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            finite,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        let inputs_finite = op.inputs().iter().all(|i| self.nodes[i.0].finite);
        let finite = if cfg!(debug_assertions) || !inputs_finite {
            value.is_finite()
        } else {
            true
        };
        if cfg!(debug_assertions) && inputs_finite && !finite {
            return Err(Error::NonFinite(op.name()));
        }
        self.nodes.push(Node { value, op, finite });
        Ok(Var(self.nodes.len() - 1))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let v = self.value(a).map(f);
        self.push(v, op)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        self.push(v, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let v = ops::transpose(self.value(a))?;
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::add(self.value(a), self.value(b))?;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::sub(self.value(a), self.value(b))?;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::mul(self.value(a), self.value(b))?;
        self.push(v, Op::Mul(a, b))
    }

    /// `a[i] + b[i mod r]` for `a: [R, C]`, `b: [r, C]` or `[C]`.
    pub fn add_tiled(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::add_tiled(self.value(a), self.value(b))?;
        self.push(v, Op::AddTiled(a, b))
    }

    pub fn mul_tiled(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::mul_tiled(self.value(a), self.value(b))?;
        self.push(v, Op::MulTiled(a, b))
    }

    /// Scales row `i` of `a` by `w[i]`.
    pub fn mul_col(&mut self, a: Var, w: Var) -> Result<Var> {
        let v = ops::mul_col(self.value(a), self.value(w))?;
        self.push(v, Op::MulCol(a, w))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, |x| x + c, Op::AddScalar(a))
    }

    /// ReLU with subgradient 0 at 0.
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, ops::relu, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, ops::sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.map(a, ops::softplus, Op::Softplus(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = Tensor::scalar(self.value(a).mean());
        self.push(v, Op::Mean(a))
    }

    /// Mean-pools consecutive groups of rows: `[G·group, C] -> [G, C]`.
    pub fn group_mean(&mut self, a: Var, group: usize) -> Result<Var> {
        let v = ops::group_mean(self.value(a), group)?;
        self.push(v, Op::GroupMean(a, group))
    }

    pub fn group_softmax(&mut self, a: Var, group: usize) -> Result<Var> {
        let v = ops::group_softmax(self.value(a), group)?;
        self.push(v, Op::GroupSoftmax(a, group))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        self.push(v, Op::Reshape(a))
    }

    pub fn select_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let src = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= src.rows()) {
            return Err(Error::Shape {
                op: "select_rows",
                left: src.shape().to_vec(),
                right: vec![bad],
            });
        }
        let v = src.select_rows(indices);
        self.push(v, Op::SelectRows(a, indices.to_vec()))
    }

    /// Non-overlapping patch convolution, see [`ops::conv_nonoverlap`].
    pub fn conv_nonoverlap(&mut self, x: Var, kernels: Var) -> Result<Var> {
        let v = ops::conv_nonoverlap(self.value(x), self.value(kernels))?;
        self.push(v, Op::Conv(x, kernels))
    }

    pub fn patches(&mut self, x: Var, patch: usize) -> Result<Var> {
        let grid = PatchGrid::of(self.value(x), patch)?;
        let v = ops::patches(self.value(x), patch)?;
        self.push(v, Op::Patches(x, grid))
    }

    pub fn channels_last(&mut self, x: Var) -> Result<Var> {
        let v = ops::channels_last(self.value(x))?;
        self.push(v, Op::ChannelsLast(x))
    }

    /// Standardizes every column of `[R, C]` with the batch's own mean and
    /// biased variance: `(x - mean) / sqrt(var + eps)`. Gradients flow
    /// through the statistics.
    pub fn batch_normalize(&mut self, a: Var, eps: f64) -> Result<Var> {
        let x = self.value(a);
        if x.rows() < 2 {
            return Err(Error::BatchTooSmall(x.rows()));
        }
        let (mean, var) = ops::column_stats(x);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let cols = x.cols();
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(cols) {
            for ((o, m), s) in row.iter_mut().zip(&mean).zip(&inv_std) {
                *o = (*o - m) * s;
            }
        }
        self.push(out, Op::BatchNorm { input: a, inv_std })
    }

    /// Pairwise squared distances `[m,d] x [n,d] -> [m,n]`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = ops::sq_dist(self.value(a), self.value(b))?;
        self.push(v, Op::SqDist(a, b))
    }

    /// Gradients of the scalar `output` with respect to every recorded value
    /// it depends on.
    pub fn gradients(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::NonScalarOutput(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::full(out.shape(), 1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Gradients of `output` with respect to each of `wrt`, erroring on any
    /// variable the output does not depend on.
    pub fn backward(&self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let mut g = self.gradients(output)?;
        wrt.iter().map(|&v| g.take(v)).collect()
    }

    fn backward_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                accumulate(grads, a, ops::matmul_nt(g, val(b))?);
                accumulate(grads, b, ops::matmul_tn(val(a), g)?);
            }
            &Op::Transpose(a) => accumulate(grads, a, ops::transpose(g)?),
            &Op::Add(a, b) => {
                accumulate(grads, a, g.clone());
                accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                accumulate(grads, a, g.clone());
                accumulate(grads, b, g.map(|x| -x));
            }
            &Op::Mul(a, b) => {
                accumulate(grads, a, ops::mul(g, val(b))?);
                accumulate(grads, b, ops::mul(g, val(a))?);
            }
            &Op::AddTiled(a, b) => {
                accumulate(grads, a, g.clone());
                accumulate(grads, b, fold_tiles(g, val(b))?);
            }
            &Op::MulTiled(a, b) => {
                accumulate(grads, a, ops::mul_tiled(g, val(b))?);
                accumulate(grads, b, fold_tiles(&ops::mul(g, val(a))?, val(b))?);
            }
            &Op::MulCol(a, w) => {
                accumulate(grads, a, ops::mul_col(g, val(w))?);
                let prod = ops::mul(g, val(a))?;
                let cols = prod.cols();
                let sums = prod.data().chunks(cols).map(|r| r.iter().sum()).collect();
                accumulate(grads, w, Tensor::new(val(w).shape().to_vec(), sums)?);
            }
            &Op::Scale(a, s) => accumulate(grads, a, g.map(|x| x * s)),
            &Op::AddScalar(a) => accumulate(grads, a, g.clone()),
            &Op::Relu(a) => {
                let d = ops::zip_same("relu", g, val(a), |gi, x| if x > 0.0 { gi } else { 0.0 })?;
                accumulate(grads, a, d);
            }
            &Op::Tanh(a) => {
                let d = ops::zip_same("tanh", g, &node.value, |gi, y| gi * (1.0 - y * y))?;
                accumulate(grads, a, d);
            }
            &Op::Sigmoid(a) => {
                let d = ops::zip_same("sigmoid", g, &node.value, |gi, y| gi * y * (1.0 - y))?;
                accumulate(grads, a, d);
            }
            &Op::Softplus(a) => {
                let d = ops::zip_same("softplus", g, val(a), |gi, x| gi * ops::sigmoid(x))?;
                accumulate(grads, a, d);
            }
            &Op::Exp(a) => accumulate(grads, a, ops::mul(g, &node.value)?),
            &Op::Sum(a) => accumulate(grads, a, Tensor::full(val(a).shape(), g.data()[0])),
            &Op::Mean(a) => {
                let n = val(a).len() as f64;
                accumulate(grads, a, Tensor::full(val(a).shape(), g.data()[0] / n));
            }
            &Op::GroupMean(a, group) => {
                let src = val(a);
                let cols = src.cols();
                let mut d = Tensor::zeros(src.shape());
                for (r, row) in d.data_mut().chunks_mut(cols).enumerate() {
                    for (o, &x) in row.iter_mut().zip(g.row(r / group)) {
                        *o = x / group as f64;
                    }
                }
                accumulate(grads, a, d);
            }
            &Op::GroupSoftmax(a, group) => {
                let y = &node.value;
                let mut d = ops::mul(g, y)?;
                for (chunk, (gc, yc)) in d
                    .data_mut()
                    .chunks_mut(group)
                    .zip(g.data().chunks(group).zip(y.data().chunks(group)))
                {
                    let dot: f64 = gc.iter().zip(yc).map(|(a, b)| a * b).sum();
                    for (o, &yi) in chunk.iter_mut().zip(yc) {
                        *o -= yi * dot;
                    }
                }
                accumulate(grads, a, d);
            }
            &Op::Reshape(a) => accumulate(grads, a, g.clone().reshape(val(a).shape())?),
            Op::SelectRows(a, indices) => {
                let src = val(*a);
                let cols = src.cols();
                let mut d = Tensor::zeros(src.shape());
                for (k, &r) in indices.iter().enumerate() {
                    for (o, &x) in d.data_mut()[r * cols..(r + 1) * cols].iter_mut().zip(g.row(k)) {
                        *o += x;
                    }
                }
                accumulate(grads, *a, d);
            }
            &Op::Conv(x, k) => {
                let (xv, kv) = (val(x), val(k));
                let grid = PatchGrid::of(xv, kv.shape()[2])?;
                let rows = ops::patches(xv, grid.patch)?;
                let gy = ops::channels_last(g)?;
                let w = kv.clone().reshape(&[kv.shape()[0], grid.patch_len()])?;
                let gw = ops::matmul_tn(&gy, &rows)?.reshape(kv.shape())?;
                let gx = ops::unpatch(&ops::matmul(&gy, &w)?, grid)?.reshape(xv.shape())?;
                accumulate(grads, x, gx);
                accumulate(grads, k, gw);
            }
            &Op::Patches(x, grid) => {
                accumulate(grads, x, ops::unpatch(g, grid)?.reshape(val(x).shape())?);
            }
            &Op::ChannelsLast(x) => accumulate(grads, x, ops::channels_first(g, val(x).shape())?),
            Op::BatchNorm { input, inv_std } => {
                let y = &node.value;
                let (rows, cols) = (y.rows(), y.cols());
                let mut mean_g = vec![0.0; cols];
                let mut mean_gy = vec![0.0; cols];
                for (gr, yr) in g.data().chunks(cols).zip(y.data().chunks(cols)) {
                    for c in 0..cols {
                        mean_g[c] += gr[c];
                        mean_gy[c] += gr[c] * yr[c];
                    }
                }
                for c in 0..cols {
                    mean_g[c] /= rows as f64;
                    mean_gy[c] /= rows as f64;
                }
                let mut d = Tensor::zeros(y.shape());
                for ((dr, gr), yr) in d
                    .data_mut()
                    .chunks_mut(cols)
                    .zip(g.data().chunks(cols))
                    .zip(y.data().chunks(cols))
                {
                    for c in 0..cols {
                        dr[c] = inv_std[c] * (gr[c] - mean_g[c] - yr[c] * mean_gy[c]);
                    }
                }
                accumulate(grads, *input, d);
            }
            &Op::SqDist(a, b) => {
                let (av, bv) = (val(a), val(b));
                let row_sums: Vec<f64> = g.data().chunks(g.cols()).map(|r| r.iter().sum()).collect();
                let mut col_sums = vec![0.0; g.cols()];
                for r in g.data().chunks(g.cols()) {
                    for (c, &x) in col_sums.iter_mut().zip(r) {
                        *c += x;
                    }
                }
                let gb_part = ops::matmul(g, bv)?;
                let ga_part = ops::matmul_tn(g, av)?;
                let d = av.cols();
                let mut ga = Tensor::zeros(av.shape());
                for (i, row) in ga.data_mut().chunks_mut(d).enumerate() {
                    for k in 0..d {
                        row[k] = 2.0 * (row_sums[i] * av.data()[i * d + k] - gb_part.data()[i * d + k]);
                    }
                }
                let mut gb = Tensor::zeros(bv.shape());
                for (j, row) in gb.data_mut().chunks_mut(d).enumerate() {
                    for k in 0..d {
                        row[k] = 2.0 * (col_sums[j] * bv.data()[j * d + k] - ga_part.data()[j * d + k]);
                    }
                }
                accumulate(grads, a, ga);
                accumulate(grads, b, gb);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, d: Tensor) {
    match &mut grads[v.0] {
        Some(g) => {
            for (x, y) in g.data_mut().iter_mut().zip(d.data()) {
                *x += y;
            }
        }
        slot @ None => *slot = Some(d),
    }
}

/// Sums the row tiles of `g` back onto `b`'s shape (reverse of tiling).
fn fold_tiles(g: &Tensor, b: &Tensor) -> Result<Tensor> {
    let cols = g.cols();
    let br = b.len() / cols;
    let mut out = Tensor::zeros(b.shape());
    for (i, row) in g.data().chunks(cols).enumerate() {
        let dst = &mut out.data_mut()[(i % br) * cols..(i % br + 1) * cols];
        for (o, &x) in dst.iter_mut().zip(row) {
            *o += x;
        }
    }
    Ok(out)
}
