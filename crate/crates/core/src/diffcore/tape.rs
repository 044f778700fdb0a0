//! A Wengert-list tape over [`Tensor`] values.
//!
//! Each operation evaluates eagerly and records its inputs; [`Tape::backward`]
//! walks the list in reverse and accumulates adjoints. Only nodes that depend
//! on a parameter receive gradients.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    SubRow(Var, Var),
    MulRow(Var, Var),
    DivRow(Var, Var),
    SubCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    ClampMin(Var, f64),
    Softmax(Var),
    LogSoftmax(Var),
    ConcatCols(Var, Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    SumCols(Var),
    MeanCols(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Records a computation for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of its shape when `v` did not influence the output.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| {
            let t = tape.value(v);
            Tensor::zeros(t.rows(), t.cols())
        })
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        detail: format!(
            "{}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        ),
    }
}

fn row_map(t: &Tensor, f: impl Fn(&[f64], &mut [f64])) -> Tensor {
    let mut out = Tensor::zeros(t.rows(), t.cols());
    let cols = t.cols();
    for r in 0..t.rows() {
        f(t.row_slice(r), &mut out.data_mut()[r * cols..(r + 1) * cols]);
    }
    out
}

fn softmax_row(x: &[f64], out: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

fn log_softmax_row(x: &[f64], out: &mut [f64]) {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    for (o, v) in out.iter_mut().zip(x) {
        *o = v - lse;
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

/// Rowwise softmax of a plain tensor.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    row_map(t, softmax_row)
}

/// Rowwise log-softmax of a plain tensor.
pub fn log_softmax_rows(t: &Tensor) -> Tensor {
    row_map(t, log_softmax_row)
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

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// A differentiable input.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// An input that receives no gradient (data, noise, masks).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(&Tensor) -> Tensor) -> Var {
        let value = f(self.value(a));
        let tracked = self.tracked(a);
        self.push(value, op, tracked)
    }

    fn binary_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let value = ta.zip_map(tb, f);
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, op, tracked))
    }

    fn binary_row(
        &mut self,
        name: &'static str,
        a: Var,
        row: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(shape_err(name, ta, tr));
        }
        let value = Tensor::from_fn(ta.rows(), ta.cols(), |r, c| f(ta.get(r, c), tr.get(0, c)));
        let tracked = self.tracked(a) || self.tracked(row);
        Ok(self.push(value, op, tracked))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let value = gemm(ta, false, tb, false, ta.rows(), ta.cols(), tb.cols());
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::MatMul(a, b), tracked))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// `a + row` with `row` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.binary_row("add_row", a, row, Op::AddRow(a, row), |x, y| x + y)
    }

    pub fn sub_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.binary_row("sub_row", a, row, Op::SubRow(a, row), |x, y| x - y)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.binary_row("mul_row", a, row, Op::MulRow(a, row), |x, y| x * y)
    }

    pub fn div_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.binary_row("div_row", a, row, Op::DivRow(a, row), |x, y| x / y)
    }

    /// `a − col` with the `n × 1` column broadcast over the columns of `a`.
    pub fn sub_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(shape_err("sub_col", ta, tc));
        }
        let value = Tensor::from_fn(ta.rows(), ta.cols(), |r, c| ta.get(r, c) - tc.get(r, 0));
        let tracked = self.tracked(a) || self.tracked(col);
        Ok(self.push(value, Op::SubCol(a, col), tracked))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::Scale(a, s), |t| t.map(|v| v * s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |t| t.map(|v| v + s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |t| t.map(|v| v.max(0.0)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |t| t.map(f64::tanh))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |t| t.map(sigmoid))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), |t| t.map(softplus))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |t| t.map(f64::exp))
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |t| t.map(f64::ln))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), |t| t.map(f64::sqrt))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |t| t.map(|v| v * v))
    }

    /// `max(a, floor)`; the gradient passes only where `a > floor`.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, Op::ClampMin(a, floor), |t| t.map(|v| v.max(floor)))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softmax(a), softmax_rows)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        self.unary(a, Op::LogSoftmax(a), log_softmax_rows)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(shape_err("concat_cols", ta, tb));
        }
        let (ca, cb) = (ta.cols(), tb.cols());
        let value = Tensor::from_fn(ta.rows(), ca + cb, |r, c| {
            if c < ca {
                ta.get(r, c)
            } else {
                tb.get(r, c - ca)
            }
        });
        let tracked = self.tracked(a) || self.tracked(b);
        Ok(self.push(value, Op::ConcatCols(a, b), tracked))
    }

    /// Sum of all entries, as `1 × 1`.
    pub fn sum(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sum(a), |t| Tensor::scalar(t.sum()))
    }

    /// Mean of all entries, as `1 × 1`.
    pub fn mean(&mut self, a: Var) -> Var {
        self.unary(a, Op::Mean(a), |t| Tensor::scalar(t.sum() / t.len() as f64))
    }

    /// Column means over the batch, `1 × cols`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        self.unary(a, Op::MeanRows(a), |t| {
            let n = t.rows() as f64;
            Tensor::from_fn(1, t.cols(), |_, c| (0..t.rows()).map(|r| t.get(r, c)).sum::<f64>() / n)
        })
    }

    /// Row sums, `rows × 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        self.unary(a, Op::SumCols(a), |t| {
            Tensor::from_fn(t.rows(), 1, |r, _| t.row_slice(r).iter().sum())
        })
    }

    /// Row means, `rows × 1`.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        self.unary(a, Op::MeanCols(a), |t| {
            let n = t.cols() as f64;
            Tensor::from_fn(t.rows(), 1, |r, _| t.row_slice(r).iter().sum::<f64>() / n)
        })
    }

    /// Reverse sweep from a `1 × 1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.shape() != [1, 1] {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("output must be 1x1, got {}x{}", out.rows(), out.cols()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.tracked(v) {
            return;
        }
        debug_assert_eq!(g.shape(), self.value(v).shape());
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                if self.tracked(a) {
                    let ga = gemm(g, false, tb, true, ta.rows(), tb.cols(), ta.cols());
                    self.accumulate(grads, a, ga);
                }
                if self.tracked(b) {
                    let gb = gemm(ta, true, g, false, ta.cols(), ta.rows(), tb.cols());
                    self.accumulate(grads, b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(a), self.value(b));
                self.accumulate(grads, a, g.zip_map(tb, |x, y| x * y));
                self.accumulate(grads, b, g.zip_map(ta, |x, y| x * y));
            }
            Op::Div(a, b) => {
                let tb = self.value(b);
                self.accumulate(grads, a, g.zip_map(tb, |x, y| x / y));
                // d(a/b)/db = −(a/b)/b
                let gb = Tensor::from_fn(g.rows(), g.cols(), |r, c| {
                    -g.get(r, c) * y.get(r, c) / tb.get(r, c)
                });
                self.accumulate(grads, b, gb);
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, row, column_sums(g));
            }
            Op::SubRow(a, row) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, row, column_sums(g).map(|v| -v));
            }
            Op::MulRow(a, row) => {
                let (ta, tr) = (self.value(a), self.value(row));
                let ga = Tensor::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) * tr.get(0, c));
                self.accumulate(grads, a, ga);
                self.accumulate(grads, row, column_sums(&g.zip_map(ta, |x, y| x * y)));
            }
            Op::DivRow(a, row) => {
                let tr = self.value(row);
                let ga = Tensor::from_fn(g.rows(), g.cols(), |r, c| g.get(r, c) / tr.get(0, c));
                self.accumulate(grads, a, ga);
                let gr = Tensor::from_fn(g.rows(), g.cols(), |r, c| {
                    -g.get(r, c) * y.get(r, c) / tr.get(0, c)
                });
                self.accumulate(grads, row, column_sums(&gr));
            }
            Op::SubCol(a, col) => {
                self.accumulate(grads, a, g.clone());
                let gc = Tensor::from_fn(g.rows(), 1, |r, _| -g.row_slice(r).iter().sum::<f64>());
                self.accumulate(grads, col, gc);
            }
            Op::Scale(a, s) => self.accumulate(grads, a, g.map(|v| v * s)),
            Op::AddScalar(a) => self.accumulate(grads, a, g.clone()),
            Op::Relu(a) => {
                let ta = self.value(a);
                self.accumulate(grads, a, g.zip_map(ta, |d, x| if x > 0.0 { d } else { 0.0 }));
            }
            Op::Tanh(a) => self.accumulate(grads, a, g.zip_map(y, |d, t| d * (1.0 - t * t))),
            Op::Sigmoid(a) => self.accumulate(grads, a, g.zip_map(y, |d, s| d * s * (1.0 - s))),
            Op::Softplus(a) => {
                let ta = self.value(a);
                self.accumulate(grads, a, g.zip_map(ta, |d, x| d * sigmoid(x)));
            }
            Op::Exp(a) => self.accumulate(grads, a, g.zip_map(y, |d, e| d * e)),
            Op::Log(a) => {
                let ta = self.value(a);
                self.accumulate(grads, a, g.zip_map(ta, |d, x| d / x));
            }
            Op::Sqrt(a) => self.accumulate(grads, a, g.zip_map(y, |d, s| 0.5 * d / s)),
            Op::Square(a) => {
                let ta = self.value(a);
                self.accumulate(grads, a, g.zip_map(ta, |d, x| 2.0 * d * x));
            }
            Op::ClampMin(a, floor) => {
                let ta = self.value(a);
                self.accumulate(grads, a, g.zip_map(ta, |d, x| if x > floor { d } else { 0.0 }));
            }
            Op::Softmax(a) => {
                let ga = Tensor::from_fn(g.rows(), g.cols(), {
                    let dots: Vec<f64> = (0..g.rows())
                        .map(|r| g.row_slice(r).iter().zip(y.row_slice(r)).map(|(d, s)| d * s).sum())
                        .collect();
                    move |r, c| y.get(r, c) * (g.get(r, c) - dots[r])
                });
                self.accumulate(grads, a, ga);
            }
            Op::LogSoftmax(a) => {
                let sums: Vec<f64> = (0..g.rows()).map(|r| g.row_slice(r).iter().sum()).collect();
                let ga = Tensor::from_fn(g.rows(), g.cols(), |r, c| {
                    g.get(r, c) - y.get(r, c).exp() * sums[r]
                });
                self.accumulate(grads, a, ga);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(a).cols();
                let cb = self.value(b).cols();
                self.accumulate(grads, a, Tensor::from_fn(g.rows(), ca, |r, c| g.get(r, c)));
                self.accumulate(grads, b, Tensor::from_fn(g.rows(), cb, |r, c| g.get(r, ca + c)));
            }
            Op::Sum(a) => {
                let ta = self.value(a);
                self.accumulate(grads, a, Tensor::filled(ta.rows(), ta.cols(), g.data()[0]));
            }
            Op::Mean(a) => {
                let ta = self.value(a);
                let v = g.data()[0] / ta.len() as f64;
                self.accumulate(grads, a, Tensor::filled(ta.rows(), ta.cols(), v));
            }
            Op::MeanRows(a) => {
                let ta = self.value(a);
                let n = ta.rows() as f64;
                self.accumulate(grads, a, Tensor::from_fn(ta.rows(), ta.cols(), |_, c| g.get(0, c) / n));
            }
            Op::SumCols(a) => {
                let ta = self.value(a);
                self.accumulate(grads, a, Tensor::from_fn(ta.rows(), ta.cols(), |r, _| g.get(r, 0)));
            }
            Op::MeanCols(a) => {
                let ta = self.value(a);
                let n = ta.cols() as f64;
                self.accumulate(grads, a, Tensor::from_fn(ta.rows(), ta.cols(), |r, _| g.get(r, 0) / n));
            }
        }
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    Tensor::from_fn(1, g.cols(), |_, c| (0..g.rows()).map(|r| g.get(r, c)).sum())
}
