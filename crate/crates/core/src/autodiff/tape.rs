//! Append-only computation record with reverse-mode differentiation.
//!
//! Every vector-Jacobian product is itself recorded as tape operations, so a
//! gradient obtained with `backward` is an ordinary [`Var`] that can be
//! differentiated again. This is what lets the meta-learner take the gradient
//! of a query loss through a sequence of inner gradient steps.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    LogSigmoid(Var),
    SumRows(Var),
    BroadcastRows(Var),
    SumCols(Var),
    BroadcastCols(Var),
    SumAll(Var),
    BroadcastScalar(Var),
    ColMax(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    ScatterRows(Var, Vec<usize>),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    PadCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    PadRows(Var, usize),
    Softmax(Var),
    SoftmaxCrossEntropy(Var, Vec<usize>),
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
            Op::AddRowBias(..) => "add_row_bias",
            Op::Affine(..) => "affine",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Abs(_) => "abs",
            Op::LogSigmoid(_) => "log_sigmoid",
            Op::SumRows(_) => "sum_rows",
            Op::BroadcastRows(_) => "broadcast_rows",
            Op::SumCols(_) => "sum_cols",
            Op::BroadcastCols(_) => "broadcast_cols",
            Op::SumAll(_) => "sum_all",
            Op::BroadcastScalar(_) => "broadcast_scalar",
            Op::ColMax(..) => "col_max",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterRows(..) => "scatter_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::PadCols(..) => "pad_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::PadRows(..) => "pad_rows",
            Op::Softmax(_) => "softmax",
            Op::SoftmaxCrossEntropy(..) => "softmax_cross_entropy",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Pointwise nonlinearities selectable from configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    Identity,
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" | "none" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    // ln σ(x) = -softplus(-x)
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    let cols = t.cols();
    for row in out.data_mut().chunks_mut(cols.max(1)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    /// Drops every node recorded after the first `len`.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Whether gradients flow into `v`.
    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        let node = self.nodes.len();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: op.name(),
                node,
            });
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node { value, op, tracked });
        Ok(Var(node))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_with(self.value(b), |x, y| x + y)?;
        self.push(value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_with(self.value(b), |x, y| x - y)?;
        self.push(value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_with(self.value(b), |x, y| x * y)?;
        self.push(value, Op::Mul(a, b), &[a, b])
    }

    /// Adds the `1 × m` row `bias` to every row of the `n × m` matrix `a`.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let [n, m] = self.shape(a);
        if self.shape(bias) != [1, m] {
            return Err(Error::shape(
                "add_row_bias",
                format!("bias {:?} for input {:?}", self.shape(bias), [n, m]),
            ));
        }
        let mut value = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for row in value.data_mut().chunks_mut(m.max(1)) {
            for (v, bv) in row.iter_mut().zip(&b) {
                *v += bv;
            }
        }
        self.push(value, Op::AddRowBias(a, bias), &[a, bias])
    }

    /// `scale · a + shift`, elementwise with constant coefficients.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let value = self.value(a).map(|x| scale * x + shift);
        self.push(value, Op::Affine(a, scale), &[a])
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Result<Var> {
        self.affine(a, scale, 0.0)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.affine(a, -1.0, 0.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::abs);
        self.push(value, Op::Abs(a), &[a])
    }

    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(log_sigmoid);
        self.push(value, Op::LogSigmoid(a), &[a])
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Result<Var> {
        match act {
            Activation::Sigmoid => self.sigmoid(a),
            Activation::Tanh => self.tanh(a),
            Activation::Relu => self.relu(a),
            Activation::Identity => Ok(a),
        }
    }

    /// `n × m → 1 × m`, summing over rows.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (n, m) = (t.rows(), t.cols());
        let mut out = vec![0.0; m];
        for r in 0..n {
            for (o, v) in out.iter_mut().zip(t.row(r)) {
                *o += v;
            }
        }
        self.push(Tensor::new(1, m, out)?, Op::SumRows(a), &[a])
    }

    /// Mean over rows, `n × m → 1 × m`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let n = self.shape(a)[0];
        if n == 0 {
            return Err(Error::shape("mean_rows", "no rows"));
        }
        let s = self.sum_rows(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// `1 × m → n × m`, repeating the row.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rows() != 1 {
            return Err(Error::shape("broadcast_rows", format!("{:?}", t.shape())));
        }
        let m = t.cols();
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(t.data());
        }
        self.push(Tensor::new(n, m, out)?, Op::BroadcastRows(a), &[a])
    }

    /// `n × m → n × 1`, summing each row.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let out: Vec<f64> = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        self.push(Tensor::new(t.rows(), 1, out)?, Op::SumCols(a), &[a])
    }

    /// `n × 1 → n × m`, repeating the column.
    pub fn broadcast_cols(&mut self, a: Var, m: usize) -> Result<Var> {
        let t = self.value(a);
        if t.cols() != 1 {
            return Err(Error::shape("broadcast_cols", format!("{:?}", t.shape())));
        }
        let n = t.rows();
        let mut out = Vec::with_capacity(n * m);
        for &v in t.data() {
            out.extend(std::iter::repeat_n(v, m));
        }
        self.push(Tensor::new(n, m, out)?, Op::BroadcastCols(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::SumAll(a), &[a])
    }

    /// `1 × 1 → rows × cols`.
    pub fn broadcast_scalar(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(a);
        if t.shape() != [1, 1] {
            return Err(Error::shape("broadcast_scalar", format!("{:?}", t.shape())));
        }
        let value = Tensor::filled(rows, cols, t.item());
        self.push(value, Op::BroadcastScalar(a), &[a])
    }

    /// Column-wise maximum, `n × m → 1 × m`. The subgradient goes to the first
    /// row attaining the maximum.
    pub fn col_max(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (n, m) = (t.rows(), t.cols());
        if n == 0 {
            return Err(Error::shape("col_max", "no rows"));
        }
        let mut arg = vec![0usize; m];
        let mut best = t.row(0).to_vec();
        for r in 1..n {
            for (c, &v) in t.row(r).iter().enumerate() {
                if v > best[c] {
                    best[c] = v;
                    arg[c] = r;
                }
            }
        }
        self.push(Tensor::new(1, m, best)?, Op::ColMax(a, arg), &[a])
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let m = t.cols();
        let mut out = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            if r >= t.rows() {
                return Err(Error::shape(
                    "gather_rows",
                    format!("row {r} out of {}", t.rows()),
                ));
            }
            out.extend_from_slice(t.row(r));
        }
        let value = Tensor::new(rows.len(), m, out)?;
        self.push(value, Op::GatherRows(a, rows.to_vec()), &[a])
    }

    /// Adjoint of `gather_rows`: row `i` of `a` is added into row `rows[i]` of
    /// an `n × m` zero matrix.
    pub fn scatter_rows(&mut self, a: Var, rows: &[usize], n: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rows() != rows.len() {
            return Err(Error::shape(
                "scatter_rows",
                format!("{} rows for {} targets", t.rows(), rows.len()),
            ));
        }
        let m = t.cols();
        let mut out = Tensor::zeros(n, m);
        for (i, &r) in rows.iter().enumerate() {
            if r >= n {
                return Err(Error::shape("scatter_rows", format!("row {r} out of {n}")));
            }
            for c in 0..m {
                let v = out.get(r, c) + t.get(i, c);
                out.set(r, c, v);
            }
        }
        self.push(out, Op::ScatterRows(a, rows.to_vec()), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts
            .first()
            .map(|&p| self.shape(p)[0])
            .ok_or_else(|| Error::shape("concat_cols", "no inputs"))?;
        let widths: Vec<usize> = parts.iter().map(|&p| self.shape(p)[1]).collect();
        if parts.iter().any(|&p| self.shape(p)[0] != n) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        self.push(
            Tensor::new(n, total, out)?,
            Op::ConcatCols(parts.to_vec()),
            parts,
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let t = self.value(a);
        if start + width > t.cols() {
            return Err(Error::shape(
                "slice_cols",
                format!("{start}+{width} > {}", t.cols()),
            ));
        }
        let mut out = Vec::with_capacity(t.rows() * width);
        for r in 0..t.rows() {
            out.extend_from_slice(&t.row(r)[start..start + width]);
        }
        let value = Tensor::new(t.rows(), width, out)?;
        self.push(value, Op::SliceCols(a, start), &[a])
    }

    /// Places `a` at column offset `start` inside a zero matrix `total` wide.
    pub fn pad_cols(&mut self, a: Var, start: usize, total: usize) -> Result<Var> {
        let t = self.value(a);
        if start + t.cols() > total {
            return Err(Error::shape("pad_cols", "does not fit"));
        }
        let mut out = Tensor::zeros(t.rows(), total);
        for r in 0..t.rows() {
            for c in 0..t.cols() {
                out.set(r, start + c, t.get(r, c));
            }
        }
        self.push(out, Op::PadCols(a, start), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let m = parts
            .first()
            .map(|&p| self.shape(p)[1])
            .ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        if parts.iter().any(|&p| self.shape(p)[1] != m) {
            return Err(Error::shape("concat_rows", "column counts differ"));
        }
        let mut out = Vec::new();
        let mut n = 0;
        for &p in parts {
            let t = self.value(p);
            n += t.rows();
            out.extend_from_slice(t.data());
        }
        self.push(
            Tensor::new(n, m, out)?,
            Op::ConcatRows(parts.to_vec()),
            parts,
        )
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let t = self.value(a);
        if start + count > t.rows() {
            return Err(Error::shape(
                "slice_rows",
                format!("{start}+{count} > {}", t.rows()),
            ));
        }
        let m = t.cols();
        let value = Tensor::new(count, m, t.data()[start * m..(start + count) * m].to_vec())?;
        self.push(value, Op::SliceRows(a, start), &[a])
    }

    pub fn pad_rows(&mut self, a: Var, start: usize, total: usize) -> Result<Var> {
        let t = self.value(a);
        if start + t.rows() > total {
            return Err(Error::shape("pad_rows", "does not fit"));
        }
        let m = t.cols();
        let mut out = vec![0.0; total * m];
        out[start * m..(start + t.rows()) * m].copy_from_slice(t.data());
        let value = Tensor::new(total, m, out)?;
        self.push(value, Op::PadRows(a, start), &[a])
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::Softmax(a), &[a])
    }

    /// Mean softmax cross-entropy of `B × N` logits against class labels.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        let (b, n) = (t.rows(), t.cols());
        if b != labels.len() || b == 0 {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("{b} rows for {} labels", labels.len()),
            ));
        }
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            if y >= n {
                return Err(Error::shape(
                    "softmax_cross_entropy",
                    format!("label {y} with {n} classes"),
                ));
            }
            let row = t.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let value = Tensor::scalar(total / b as f64);
        self.push(
            value,
            Op::SoftmaxCrossEntropy(logits, labels.to_vec()),
            &[logits],
        )
    }

    /// L1 norm of each row, `n × m → n × 1`.
    pub fn l1_rows(&mut self, a: Var) -> Result<Var> {
        let abs = self.abs(a)?;
        self.sum_cols(abs)
    }

    /// Records the vector-Jacobian product of node `index` given its output
    /// cotangent `g`. Returns `(input, contribution)` pairs for tracked inputs.
    fn vjp(&mut self, index: usize, g: Var) -> Result<Vec<(Var, Var)>> {
        let op = self.nodes[index].op.clone();
        let out = Var(index);
        let mut contrib = Vec::with_capacity(2);
        macro_rules! wants {
            ($v:expr) => {
                self.nodes[$v.0].tracked
            };
        }
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants!(a) {
                    let bt = self.transpose(b)?;
                    contrib.push((a, self.matmul(g, bt)?));
                }
                if wants!(b) {
                    let at = self.transpose(a)?;
                    contrib.push((b, self.matmul(at, g)?));
                }
            }
            Op::Transpose(a) => contrib.push((a, self.transpose(g)?)),
            Op::Add(a, b) => {
                contrib.push((a, g));
                contrib.push((b, g));
            }
            Op::Sub(a, b) => {
                contrib.push((a, g));
                if wants!(b) {
                    contrib.push((b, self.neg(g)?));
                }
            }
            Op::Mul(a, b) => {
                if wants!(a) {
                    contrib.push((a, self.mul(g, b)?));
                }
                if wants!(b) {
                    contrib.push((b, self.mul(g, a)?));
                }
            }
            Op::AddRowBias(a, bias) => {
                contrib.push((a, g));
                if wants!(bias) {
                    contrib.push((bias, self.sum_rows(g)?));
                }
            }
            Op::Affine(a, scale) => contrib.push((a, self.scale(g, scale)?)),
            Op::Sigmoid(a) => {
                let one_minus = self.affine(out, -1.0, 1.0)?;
                let d = self.mul(out, one_minus)?;
                contrib.push((a, self.mul(g, d)?));
            }
            Op::Tanh(a) => {
                let sq = self.mul(out, out)?;
                let d = self.affine(sq, -1.0, 1.0)?;
                contrib.push((a, self.mul(g, d)?));
            }
            Op::Relu(a) => {
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                let mask = self.constant(mask);
                contrib.push((a, self.mul(g, mask)?));
            }
            Op::Abs(a) => {
                let sign = self.value(a).map(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                let sign = self.constant(sign);
                contrib.push((a, self.mul(g, sign)?));
            }
            Op::LogSigmoid(a) => {
                let na = self.neg(a)?;
                let d = self.sigmoid(na)?;
                contrib.push((a, self.mul(g, d)?));
            }
            Op::SumRows(a) => {
                let n = self.shape(a)[0];
                contrib.push((a, self.broadcast_rows(g, n)?));
            }
            Op::BroadcastRows(a) => contrib.push((a, self.sum_rows(g)?)),
            Op::SumCols(a) => {
                let m = self.shape(a)[1];
                contrib.push((a, self.broadcast_cols(g, m)?));
            }
            Op::BroadcastCols(a) => contrib.push((a, self.sum_cols(g)?)),
            Op::SumAll(a) => {
                let [r, c] = self.shape(a);
                contrib.push((a, self.broadcast_scalar(g, r, c)?));
            }
            Op::BroadcastScalar(a) => contrib.push((a, self.sum_all(g)?)),
            Op::ColMax(a, arg) => {
                let [n, m] = self.shape(a);
                let mut mask = Tensor::zeros(n, m);
                for (c, &r) in arg.iter().enumerate() {
                    mask.set(r, c, 1.0);
                }
                let mask = self.constant(mask);
                let spread = self.broadcast_rows(g, n)?;
                contrib.push((a, self.mul(spread, mask)?));
            }
            Op::GatherRows(a, rows) => {
                let n = self.shape(a)[0];
                contrib.push((a, self.scatter_rows(g, &rows, n)?));
            }
            Op::ScatterRows(a, rows) => contrib.push((a, self.gather_rows(g, &rows)?)),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.shape(p)[1];
                    if wants!(p) {
                        contrib.push((p, self.slice_cols(g, offset, w)?));
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let total = self.shape(a)[1];
                contrib.push((a, self.pad_cols(g, start, total)?));
            }
            Op::PadCols(a, start) => {
                let w = self.shape(a)[1];
                contrib.push((a, self.slice_cols(g, start, w)?));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let h = self.shape(p)[0];
                    if wants!(p) {
                        contrib.push((p, self.slice_rows(g, offset, h)?));
                    }
                    offset += h;
                }
            }
            Op::SliceRows(a, start) => {
                let total = self.shape(a)[0];
                contrib.push((a, self.pad_rows(g, start, total)?));
            }
            Op::PadRows(a, start) => {
                let h = self.shape(a)[0];
                contrib.push((a, self.slice_rows(g, start, h)?));
            }
            Op::Softmax(a) => {
                let m = self.shape(a)[1];
                let gy = self.mul(g, out)?;
                let s = self.sum_cols(gy)?;
                let s = self.broadcast_cols(s, m)?;
                let centered = self.sub(g, s)?;
                contrib.push((a, self.mul(out, centered)?));
            }
            Op::SoftmaxCrossEntropy(logits, labels) => {
                let [b, n] = self.shape(logits);
                let probs = self.softmax(logits)?;
                let mut onehot = Tensor::zeros(b, n);
                for (r, &y) in labels.iter().enumerate() {
                    onehot.set(r, y, 1.0);
                }
                let onehot = self.constant(onehot);
                let diff = self.sub(probs, onehot)?;
                let diff = self.scale(diff, 1.0 / b as f64)?;
                let gs = self.broadcast_scalar(g, b, n)?;
                contrib.push((logits, self.mul(diff, gs)?));
            }
        }
        contrib.retain(|(v, _)| self.nodes[v.0].tracked);
        Ok(contrib)
    }

    /// Reverse-mode gradient of the scalar `output` with respect to `wrt`.
    ///
    /// The returned gradients are recorded on the tape and are themselves
    /// differentiable. Inputs that do not influence `output` get a constant
    /// zero gradient.
    pub fn backward(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.shape(output) != [1, 1] {
            return Err(Error::shape(
                "backward",
                format!("output must be 1x1, got {:?}", self.shape(output)),
            ));
        }
        let mut grads: Vec<Option<Var>> = vec![None; output.0 + 1];
        if self.nodes[output.0].tracked {
            grads[output.0] = Some(self.constant(Tensor::scalar(1.0)));
        }
        for index in (0..=output.0).rev() {
            if !self.nodes[index].tracked || matches!(self.nodes[index].op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[index] else { continue };
            for (input, piece) in self.vjp(index, g)? {
                grads[input.0] = Some(match grads[input.0] {
                    Some(acc) => self.add(acc, piece)?,
                    None => piece,
                });
            }
        }
        wrt.iter()
            .map(|&w| match grads.get(w.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let [r, c] = self.shape(w);
                    Ok(self.constant(Tensor::zeros(r, c)))
                }
            })
            .collect()
    }

    /// Gradient values only; the backward record is discarded afterwards.
    pub fn gradients(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let mark = self.len();
        let result = self
            .backward(output, wrt)
            .map(|gs| gs.iter().map(|&g| self.value(g).clone()).collect());
        self.truncate(mark);
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let p = tape.param(Tensor::scalar(3.0));
        let y = tape.mul(p, p).unwrap();
        let g = tape.gradients(y, &[p]).unwrap();
        assert_eq!(g[0].item(), 6.0);
    }

    #[test]
    fn second_derivative_of_cube() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let x2 = tape.mul(x, x).unwrap();
        let x3 = tape.mul(x2, x).unwrap();
        let g = tape.backward(x3, &[x]).unwrap()[0];
        assert_eq!(tape.value(g).item(), 12.0);
        let h = tape.backward(g, &[x]).unwrap()[0];
        assert_eq!(tape.value(h).item(), 12.0);
    }

    #[test]
    fn col_max_ties_go_to_lowest_row() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[vec![1.0, 5.0], vec![1.0, 2.0]]));
        let m = tape.col_max(a).unwrap();
        assert_eq!(tape.value(m).data(), &[1.0, 5.0]);
        let s = tape.sum_all(m).unwrap();
        let g = tape.gradients(s, &[a]).unwrap();
        assert_eq!(g[0].data(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn abs_subgradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let a = tape.param(t(&[vec![-2.0, 0.0, 3.0]]));
        let l1 = tape.l1_rows(a).unwrap();
        assert_eq!(tape.value(l1).item(), 5.0);
        let s = tape.sum_all(l1).unwrap();
        let g = tape.gradients(s, &[a]).unwrap();
        assert_eq!(g[0].data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn cross_entropy_of_uniform_logits_is_ln_n() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(2, 5));
        let ce = tape.softmax_cross_entropy(z, &[0, 3]).unwrap();
        assert!((tape.value(ce).item() - 5f64.ln()).abs() < 1e-15);
        assert!(tape.softmax_cross_entropy(z, &[5, 0]).is_err());
    }

    #[test]
    fn non_finite_values_are_reported_with_op_name() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::scalar(1e200));
        let err = tape.mul(a, a).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "mul", .. }));
    }

    #[test]
    fn unrelated_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::scalar(1.0));
        let b = tape.param(Tensor::zeros(2, 3));
        let y = tape.sigmoid(a).unwrap();
        let g = tape.gradients(y, &[a, b]).unwrap();
        assert_eq!(g[1], Tensor::zeros(2, 3));
        assert!((g[0].item() - sigmoid(1.0) * (1.0 - sigmoid(1.0))).abs() < 1e-15);
    }

    #[test]
    fn gradients_leave_tape_length_unchanged() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::scalar(0.3));
        let y = tape.tanh(a).unwrap();
        let len = tape.len();
        tape.gradients(y, &[a]).unwrap();
        assert_eq!(tape.len(), len);
    }

    #[test]
    fn log_sigmoid_is_stable_for_large_inputs() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::row_vector(&[-800.0, 0.0, 800.0]));
        let y = tape.log_sigmoid(a).unwrap();
        let v = tape.value(y).data().to_vec();
        assert_eq!(v[0], -800.0);
        assert!((v[1] + 2f64.ln()).abs() < 1e-15);
        assert_eq!(v[2], 0.0);
    }
}
