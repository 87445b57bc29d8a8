//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and the handles
//! of its inputs. [`Tape::backward`] walks the tape once in reverse order and
//! accumulates exact gradients into every node that depends on a leaf created
//! with [`Tape::leaf`]. Constants never receive gradients.
//!
//! There is no broadcasting: ops that combine differently shaped operands
//! (`add_bias`, `scale_rows`) say so in their name.

use std::rc::Rc;

use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constant sparse row operator: `out[i] = Σ_k coef[k] · x[index[k]]` over
/// the entries of row `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedRows {
    offsets: Vec<usize>,
    indices: Vec<usize>,
    coefs: Vec<f64>,
    input_rows: usize,
}

impl WeightedRows {
    /// Row `i` becomes the `weights`-weighted mean of the rows listed in
    /// `lists[i]`. Empty lists, or lists whose weights sum to zero, produce a
    /// zero row.
    pub fn weighted_mean(lists: &[Vec<usize>], weights: &[f64]) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut indices = Vec::new();
        let mut coefs = Vec::new();
        offsets.push(0);
        for list in lists {
            let total: f64 = list.iter().map(|&j| weights[j]).sum();
            if total > 0.0 {
                for &j in list {
                    indices.push(j);
                    coefs.push(weights[j] / total);
                }
            }
            offsets.push(indices.len());
        }
        WeightedRows {
            offsets,
            indices,
            coefs,
            input_rows: weights.len(),
        }
    }

    /// Build from explicit `(column, coefficient)` entries per output row.
    pub fn from_entries(input_rows: usize, rows: &[Vec<(usize, f64)>]) -> Result<Self> {
        let mut offsets = vec![0];
        let mut indices = Vec::new();
        let mut coefs = Vec::new();
        for row in rows {
            for &(j, c) in row {
                if j >= input_rows {
                    return Err(Error::Index(format!(
                        "row operator references input row {j} of {input_rows}"
                    )));
                }
                indices.push(j);
                coefs.push(c);
            }
            offsets.push(indices.len());
        }
        Ok(WeightedRows {
            offsets,
            indices,
            coefs,
            input_rows,
        })
    }

    pub fn output_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn input_rows(&self) -> usize {
        self.input_rows
    }

    pub fn row_entries(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[i]..self.offsets[i + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.coefs[span].iter().copied())
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let d = x.cols();
        let mut out = Matrix::zeros(self.output_rows(), d);
        for i in 0..self.output_rows() {
            let dst = out.row_mut(i);
            for (j, c) in self.row_entries(i) {
                for (o, v) in dst.iter_mut().zip(x.row(j)) {
                    *o += c * v;
                }
            }
        }
        out
    }

    fn accumulate_transpose(&self, g: &Matrix, acc: &mut Matrix) {
        for i in 0..self.output_rows() {
            let src = g.row(i);
            for (j, c) in self.row_entries(i) {
                for (a, v) in acc.row_mut(j).iter_mut().zip(src) {
                    *a += c * v;
                }
            }
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    ScaleRows(Var, Var),
    Sigmoid(Var),
    Softplus(Var),
    LeakyRelu(Var, f64),
    Abs(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    MeanRows(Var),
    SumCols(Var),
    SumAll(Var),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    GatherCols(Var, Vec<usize>),
    Aggregate(Var, Rc<WeightedRows>),
    LogSoftmax(Var),
    Pick(Var, Vec<usize>),
}

struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Matrix>>>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
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

    /// Smallest `|x|` over the inputs of every leaky ReLU and absolute value
    /// recorded so far, where those ops are not differentiable. `None` when
    /// the tape has no such op.
    pub fn nearest_kink(&self) -> Option<f64> {
        self.nodes
            .iter()
            .filter_map(|node| match node.op {
                Op::LeakyRelu(a, _) | Op::Abs(a) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.nodes[a.0].value.data().iter().map(|x| x.abs()))
            .reduce(f64::min)
    }

    /// A differentiable input (model parameter or variable under test).
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push_raw(value, Op::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` loss with respect to `v`. `None` before
    /// `backward` or when `v` does not influence the loss.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.grads.as_ref()?.get(v.0)?.as_ref()
    }

    fn push_raw(&mut self, value: Matrix, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.push_raw(value, op, tracked)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op, &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    /// Adds a `1 x c` row to every row of an `n x c` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (n, c) = self.value(a).shape();
        let bs = self.value(bias).shape();
        if bs != (1, c) {
            return Err(Error::shape("add_bias", format!("{n}x{c} plus {bs:?}")));
        }
        let mut value = self.value(a).clone();
        let b = self.value(bias).data().to_vec();
        for i in 0..n {
            for (v, bv) in value.row_mut(i).iter_mut().zip(&b) {
                *v += bv;
            }
        }
        Ok(self.push(value, Op::AddBias(a, bias), &[a, bias]))
    }

    /// Multiplies row `i` of an `n x c` matrix by entry `i` of an `n x 1` column.
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Result<Var> {
        let (n, c) = self.value(a).shape();
        let ws = self.value(w).shape();
        if ws != (n, 1) {
            return Err(Error::shape("scale_rows", format!("{n}x{c} by {ws:?}")));
        }
        let mut value = self.value(a).clone();
        for i in 0..n {
            let s = self.value(w).data()[i];
            value.row_mut(i).iter_mut().for_each(|v| *v *= s);
        }
        Ok(self.push(value, Op::ScaleRows(a, w), &[a, w]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(
            a,
            move |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, Op::Abs(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::shape("concat_cols", "no operands"));
        };
        let n = self.value(*first).rows();
        if let Some(bad) = parts.iter().find(|v| self.value(**v).rows() != n) {
            return Err(Error::shape(
                "concat_cols",
                format!("row counts {n} and {}", self.value(*bad).rows()),
            ));
        }
        let total: usize = parts.iter().map(|v| self.value(*v).cols()).sum();
        let mut value = Matrix::zeros(n, total);
        for i in 0..n {
            let mut off = 0;
            for p in parts {
                let src = self.value(*p).row(i);
                value.row_mut(i)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Column means, `n x c -> 1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (n, c) = self.value(a).shape();
        if n == 0 {
            return Err(Error::shape("mean_rows", "zero rows"));
        }
        let mut value = Matrix::zeros(1, c);
        for i in 0..n {
            for (o, v) in value.data_mut().iter_mut().zip(self.value(a).row(i)) {
                *o += v;
            }
        }
        value.data_mut().iter_mut().for_each(|v| *v /= n as f64);
        Ok(self.push(value, Op::MeanRows(a), &[a]))
    }

    /// Row sums, `n x c -> n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Matrix::column_vector((0..m.rows()).map(|i| m.row(i).iter().sum()).collect());
        self.push(value, Op::SumCols(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let len = self.value(a).len();
        if len == 0 {
            return Err(Error::shape("mean_all", "empty operand"));
        }
        let s = self.sum_all(a);
        Ok(self.scale(s, 1.0 / len as f64))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), &[a])
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let n = self.value(a).rows();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {n}")));
        }
        let value = self.value(a).select_rows(idx);
        Ok(self.push(value, Op::GatherRows(a, idx.to_vec()), &[a]))
    }

    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let (n, c) = self.value(a).shape();
        if let Some(&bad) = idx.iter().find(|&&j| j >= c) {
            return Err(Error::shape("gather_cols", format!("column {bad} of {c}")));
        }
        let m = self.value(a);
        let mut value = Matrix::zeros(n, idx.len());
        for i in 0..n {
            for (k, &j) in idx.iter().enumerate() {
                value[(i, k)] = m[(i, j)];
            }
        }
        Ok(self.push(value, Op::GatherCols(a, idx.to_vec()), &[a]))
    }

    /// Applies a constant sparse row operator (neighbourhood aggregation).
    pub fn aggregate(&mut self, a: Var, op: Rc<WeightedRows>) -> Result<Var> {
        let n = self.value(a).rows();
        if op.input_rows() != n {
            return Err(Error::shape(
                "aggregate",
                format!("operator expects {} rows, got {n}", op.input_rows()),
            ));
        }
        let value = op.apply(self.value(a));
        Ok(self.push(value, Op::Aggregate(a, op), &[a]))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for i in 0..value.rows() {
            let row = value.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        self.push(value, Op::LogSoftmax(a), &[a])
    }

    /// Picks entry `cols[i]` from row `i`, giving an `n x 1` column.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let (n, c) = self.value(a).shape();
        if cols.len() != n || cols.iter().any(|&j| j >= c) {
            return Err(Error::shape(
                "pick",
                format!("{} column picks for a {n}x{c} operand", cols.len()),
            ));
        }
        let m = self.value(a);
        let value = Matrix::column_vector(cols.iter().enumerate().map(|(i, &j)| m[(i, j)]).collect());
        Ok(self.push(value, Op::Pick(a, cols.to_vec()), &[a]))
    }

    /// Accumulates gradients of the scalar `loss` into every tracked node.
    ///
    /// A tape can be differentiated once; build a fresh tape per step.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.grads.is_some() {
            return Err(Error::State("backward already ran on this tape".into()));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].tracked {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let nodes = &self.nodes;
        let out = &nodes[idx].value;
        let val = |v: Var| &nodes[v.0].value;
        let mut acc = |v: Var, delta: Matrix| {
            if !nodes[v.0].tracked {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };

        match &nodes[idx].op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if nodes[a.0].tracked {
                    let mut ga = Matrix::zeros(val(*a).rows(), val(*a).cols());
                    gemm(false, g, true, val(*b), &mut ga);
                    acc(*a, ga);
                }
                if nodes[b.0].tracked {
                    let mut gb = Matrix::zeros(val(*b).rows(), val(*b).cols());
                    gemm(true, val(*a), false, g, &mut gb);
                    acc(*b, gb);
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
                acc(*a, g.zip_map(val(*b), |x, y| x * y));
                acc(*b, g.zip_map(val(*a), |x, y| x * y));
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::AddBias(a, bias) => {
                acc(*a, g.clone());
                let mut gb = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (o, v) in gb.data_mut().iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                acc(*bias, gb);
            }
            Op::ScaleRows(a, w) => {
                let wv = val(*w).data();
                let mut ga = g.clone();
                for (i, &s) in wv.iter().enumerate() {
                    ga.row_mut(i).iter_mut().for_each(|x| *x *= s);
                }
                acc(*a, ga);
                let gw = (0..g.rows())
                    .map(|i| g.row(i).iter().zip(val(*a).row(i)).map(|(x, y)| x * y).sum())
                    .collect();
                acc(*w, Matrix::column_vector(gw));
            }
            Op::Sigmoid(a) => acc(*a, g.zip_map(out, |x, s| x * s * (1.0 - s))),
            Op::Softplus(a) => acc(*a, g.zip_map(val(*a), |x, z| x * sigmoid(z))),
            Op::LeakyRelu(a, slope) => {
                acc(*a, g.zip_map(val(*a), |x, z| if z > 0.0 { x } else { slope * x }))
            }
            Op::Abs(a) => acc(*a, g.zip_map(val(*a), |x, z| x * z.signum() * f64::from(z != 0.0))),
            Op::Square(a) => acc(*a, g.zip_map(val(*a), |x, z| 2.0 * x * z)),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let (n, c) = val(*p).shape();
                    let mut gp = Matrix::zeros(n, c);
                    for i in 0..n {
                        gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                    }
                    off += c;
                    acc(*p, gp);
                }
            }
            Op::MeanRows(a) => {
                let (n, c) = val(*a).shape();
                let mut ga = Matrix::zeros(n, c);
                for i in 0..n {
                    for (o, v) in ga.row_mut(i).iter_mut().zip(g.data()) {
                        *o = v / n as f64;
                    }
                }
                acc(*a, ga);
            }
            Op::SumCols(a) => {
                let (n, c) = val(*a).shape();
                let mut ga = Matrix::zeros(n, c);
                for i in 0..n {
                    let gi = g.data()[i];
                    ga.row_mut(i).iter_mut().for_each(|x| *x = gi);
                }
                acc(*a, ga);
            }
            Op::SumAll(a) => {
                let (n, c) = val(*a).shape();
                acc(*a, Matrix::filled(n, c, g.data()[0]));
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::GatherRows(a, idx_list) => {
                let (n, c) = val(*a).shape();
                let mut ga = Matrix::zeros(n, c);
                for (k, &i) in idx_list.iter().enumerate() {
                    for (o, v) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(*a, ga);
            }
            Op::GatherCols(a, idx_list) => {
                let (n, c) = val(*a).shape();
                let mut ga = Matrix::zeros(n, c);
                for i in 0..n {
                    for (k, &j) in idx_list.iter().enumerate() {
                        ga[(i, j)] += g[(i, k)];
                    }
                }
                acc(*a, ga);
            }
            Op::Aggregate(a, op) => {
                let (n, c) = val(*a).shape();
                let mut ga = Matrix::zeros(n, c);
                op.accumulate_transpose(g, &mut ga);
                acc(*a, ga);
            }
            Op::LogSoftmax(a) => {
                let mut ga = g.clone();
                for i in 0..ga.rows() {
                    let gsum: f64 = g.row(i).iter().sum();
                    for (o, lp) in ga.row_mut(i).iter_mut().zip(out.row(i)) {
                        *o -= lp.exp() * gsum;
                    }
                }
                acc(*a, ga);
            }
            Op::Pick(a, cols) => {
                let (n, c) = val(*a).shape();
                let mut ga = Matrix::zeros(n, c);
                for (i, &j) in cols.iter().enumerate() {
                    ga[(i, j)] = g.data()[i];
                }
                acc(*a, ga);
            }
        }
    }
}
