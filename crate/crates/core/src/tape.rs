//! Define-by-run reverse-mode automatic differentiation.
//!
//! Every primitive appends a node holding its output value and enough of its
//! inputs to replay the chain rule. Nodes are pushed in evaluation order, so
//! the node list is topologically sorted by construction and `backward` walks
//! it once in reverse.

use crate::error::{Error, Result};
use crate::tensor::{gemm, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Mul,
}

/// Lower clamp for probabilities entering a logarithm.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    AddRowBias(Var, Var),
    Unary(Unary, Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    SliceCols {
        input: Var,
        start: usize,
    },
    Select {
        mask: Vec<bool>,
        on: Var,
        off: Var,
    },
    Sum(Var),
    Scale(Var, f64),
    WeightedBce {
        probs: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Vec<f64>>>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf; its gradient is kept after `backward`.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if it received one.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        self.leaf_grads[v.0].as_ref().map(|g| {
            Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad matches value")
        })
    }

    /// Gradient of a leaf, or zeros when nothing reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()))
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = (tb.rows(), tb.cols());
        if k != k2 {
            return Err(Error::dimension("matmul", ta.shape(), tb.shape()));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            ta.data(),
            (k as isize, 1),
            tb.data(),
            (n as isize, 1),
            0.0,
            &mut out,
        );
        let req = self.req(a) || self.req(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), req))
    }

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            let name = match op {
                Binary::Add => "add",
                Binary::Mul => "mul",
            };
            return Err(Error::dimension(name, ta.shape(), tb.shape()));
        }
        let data: Vec<f64> = match op {
            Binary::Add => ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(x, y)| x + y)
                .collect(),
            Binary::Mul => ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(x, y)| x * y)
                .collect(),
        };
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let req = self.req(a) || self.req(b);
        Ok(self.push(value, Op::Binary(op, a, b), req))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    /// Adds a length-`n` bias to every row of an `m × n` matrix.
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.cols();
        if tb.len() != n || tb.rows() != 1 {
            return Err(Error::dimension("add_row_bias", tx.shape(), tb.shape()));
        }
        let mut data = tx.data().to_vec();
        for row in data.chunks_exact_mut(n.max(1)) {
            for (v, b) in row.iter_mut().zip(tb.data()) {
                *v += b;
            }
        }
        let value = Tensor::new(tx.shape().to_vec(), data)?;
        let req = self.req(x) || self.req(bias);
        Ok(self.push(value, Op::AddRowBias(x, bias), req))
    }

    pub fn unary(&mut self, op: Unary, x: Var) -> Var {
        let tx = self.value(x);
        let data: Vec<f64> = match op {
            Unary::Sigmoid => tx.data().iter().map(|&v| sigmoid(v)).collect(),
            Unary::Tanh => tx.data().iter().map(|v| v.tanh()).collect(),
            Unary::Relu => tx
                .data()
                .iter()
                .map(|&v| if v > 0.0 { v } else { 0.0 })
                .collect(),
        };
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let req = self.req(x);
        self.push(value, Op::Unary(op, x), req)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x)
    }

    /// Concatenates along `axis`. For rank-1 operands only axis 0 exists;
    /// for matrices axis 0 stacks rows and axis 1 joins columns.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let rank = self.value(*first).rank();
        if axis >= rank {
            return Err(Error::contract(format!(
                "concat axis {axis} on rank {rank}"
            )));
        }
        for p in parts {
            if self.value(*p).rank() != rank {
                return Err(Error::dimension(
                    "concat",
                    self.value(*first).shape(),
                    self.value(*p).shape(),
                ));
            }
        }
        let value = if rank == 1 {
            let mut data = Vec::new();
            for p in parts {
                data.extend_from_slice(self.value(*p).data());
            }
            Tensor::vector(data)
        } else if axis == 0 {
            let cols = self.value(*first).cols();
            let mut data = Vec::new();
            let mut rows = 0;
            for p in parts {
                let t = self.value(*p);
                if t.cols() != cols {
                    return Err(Error::dimension(
                        "concat",
                        self.value(*first).shape(),
                        t.shape(),
                    ));
                }
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            Tensor::matrix(rows, cols, data)?
        } else {
            let rows = self.value(*first).rows();
            let mut cols = 0;
            for p in parts {
                let t = self.value(*p);
                if t.rows() != rows {
                    return Err(Error::dimension(
                        "concat",
                        self.value(*first).shape(),
                        t.shape(),
                    ));
                }
                cols += t.cols();
            }
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(self.value(*p).row(r));
                }
            }
            Tensor::matrix(rows, cols, data)?
        };
        let req = parts.iter().any(|p| self.req(*p));
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            req,
        ))
    }

    /// Columns `start..start + width` of a matrix (or elements of a vector).
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let tx = self.value(x);
        let cols = tx.cols();
        if start + width > cols {
            return Err(Error::contract(format!(
                "column slice {start}..{} out of range for shape {:?}",
                start + width,
                tx.shape()
            )));
        }
        let rows = tx.rows();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&tx.row(r)[start..start + width]);
        }
        let shape = if tx.rank() == 1 {
            vec![width]
        } else {
            vec![rows, width]
        };
        let value = Tensor::new(shape, data)?;
        let req = self.req(x);
        Ok(self.push(value, Op::SliceCols { input: x, start }, req))
    }

    /// Row-wise select: row `r` comes from `on` where `mask[r]`, else from
    /// `off`. With a 0/1 mask this is `m∘on + (1−m)∘off`, computed exactly.
    pub fn select_rows(&mut self, mask: &[bool], on: Var, off: Var) -> Result<Var> {
        let (ton, toff) = (self.value(on), self.value(off));
        if ton.shape() != toff.shape() || ton.rows() != mask.len() {
            return Err(Error::dimension("select_rows", ton.shape(), toff.shape()));
        }
        let mut data = Vec::with_capacity(ton.len());
        for (r, &m) in mask.iter().enumerate() {
            data.extend_from_slice(if m { ton.row(r) } else { toff.row(r) });
        }
        let value = Tensor::new(ton.shape().to_vec(), data)?;
        let req = self.req(on) || self.req(off);
        Ok(self.push(
            value,
            Op::Select {
                mask: mask.to_vec(),
                on,
                off,
            },
            req,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let req = self.req(x);
        self.push(Tensor::scalar(total), Op::Sum(x), req)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v * factor).collect();
        let value = Tensor::new(tx.shape().to_vec(), data).expect("same shape");
        let req = self.req(x);
        self.push(value, Op::Scale(x, factor), req)
    }

    /// `Σ w·[−y·ln p − (1−y)·ln(1−p)]` over all entries, with `p` clamped to
    /// `[PROB_CLAMP, 1 − PROB_CLAMP]`. Zero weights mask entries out.
    pub fn weighted_bce(
        &mut self,
        probs: Var,
        targets: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Var> {
        let tp = self.value(probs);
        if targets.len() != tp.len() || weights.len() != tp.len() {
            return Err(Error::dimension(
                "weighted_bce",
                tp.shape(),
                &[targets.len(), weights.len()],
            ));
        }
        let mut total = 0.0;
        for ((&p, &y), &w) in tp.data().iter().zip(&targets).zip(&weights) {
            if w == 0.0 {
                continue;
            }
            let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            total += w * (-y * pc.ln() - (1.0 - y) * (1.0 - pc).ln());
        }
        let req = self.req(probs);
        Ok(self.push(
            Tensor::scalar(total),
            Op::WeightedBce {
                probs,
                targets,
                weights,
            },
            req,
        ))
    }

    /// Accumulates `∂loss/∂leaf` into every trainable leaf. Calling it again
    /// without [`Tape::zero_grad`] adds to the existing gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let Tape { nodes, leaf_grads } = self;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let req = |v: &Var| nodes[v.0].requires_grad;
            let val = |v: &Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => match &mut leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(g),
                },
                Op::MatMul(a, b) => {
                    let (ta, tb) = (val(a), val(b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    if req(a) {
                        let slot = slot(&mut grads, *a, m * k);
                        gemm(
                            m,
                            n,
                            k,
                            &g,
                            (n as isize, 1),
                            tb.data(),
                            (1, n as isize),
                            1.0,
                            slot,
                        );
                    }
                    if req(b) {
                        let slot = slot(&mut grads, *b, k * n);
                        gemm(
                            k,
                            m,
                            n,
                            ta.data(),
                            (1, k as isize),
                            &g,
                            (n as isize, 1),
                            1.0,
                            slot,
                        );
                    }
                }
                Op::Binary(op, a, b) => {
                    for (this, other) in [(a, b), (b, a)] {
                        if !req(this) {
                            continue;
                        }
                        let s = slot(&mut grads, *this, g.len());
                        match op {
                            Binary::Add => s.iter_mut().zip(&g).for_each(|(s, d)| *s += d),
                            Binary::Mul => s
                                .iter_mut()
                                .zip(&g)
                                .zip(val(other).data())
                                .for_each(|((s, d), o)| *s += d * o),
                        }
                    }
                }
                Op::AddRowBias(x, bias) => {
                    if req(x) {
                        let s = slot(&mut grads, *x, g.len());
                        s.iter_mut().zip(&g).for_each(|(s, d)| *s += d);
                    }
                    if req(bias) {
                        let n = val(bias).len();
                        let s = slot(&mut grads, *bias, n);
                        for row in g.chunks_exact(n.max(1)) {
                            s.iter_mut().zip(row).for_each(|(s, d)| *s += d);
                        }
                    }
                }
                Op::Unary(op, x) => {
                    let out = node.value.data();
                    let s = slot(&mut grads, *x, g.len());
                    match op {
                        Unary::Sigmoid => {
                            for ((s, d), y) in s.iter_mut().zip(&g).zip(out) {
                                *s += d * y * (1.0 - y);
                            }
                        }
                        Unary::Tanh => {
                            for ((s, d), y) in s.iter_mut().zip(&g).zip(out) {
                                *s += d * (1.0 - y * y);
                            }
                        }
                        Unary::Relu => {
                            for ((s, d), xin) in s.iter_mut().zip(&g).zip(val(x).data()) {
                                if *xin > 0.0 {
                                    *s += d;
                                }
                            }
                        }
                    }
                }
                Op::Concat { parts, axis } => {
                    let out = &node.value;
                    if out.rank() == 1 || *axis == 0 {
                        let mut offset = 0;
                        for p in parts {
                            let len = val(p).len();
                            if req(p) {
                                let s = slot(&mut grads, *p, len);
                                s.iter_mut()
                                    .zip(&g[offset..offset + len])
                                    .for_each(|(s, d)| *s += d);
                            }
                            offset += len;
                        }
                    } else {
                        let (rows, cols) = (out.rows(), out.cols());
                        let mut offset = 0;
                        for p in parts {
                            let pc = val(p).cols();
                            if req(p) {
                                let s = slot(&mut grads, *p, rows * pc);
                                for r in 0..rows {
                                    let src = &g[r * cols + offset..r * cols + offset + pc];
                                    s[r * pc..(r + 1) * pc]
                                        .iter_mut()
                                        .zip(src)
                                        .for_each(|(s, d)| *s += d);
                                }
                            }
                            offset += pc;
                        }
                    }
                }
                Op::SliceCols { input, start } => {
                    let tin = val(input);
                    let (rows, cols) = (tin.rows(), tin.cols());
                    let width = node.value.cols();
                    let s = slot(&mut grads, *input, rows * cols);
                    for r in 0..rows {
                        s[r * cols + start..r * cols + start + width]
                            .iter_mut()
                            .zip(&g[r * width..(r + 1) * width])
                            .for_each(|(s, d)| *s += d);
                    }
                }
                Op::Select { mask, on, off } => {
                    let cols = node.value.cols();
                    for (target, want) in [(on, true), (off, false)] {
                        if !req(target) {
                            continue;
                        }
                        let s = slot(&mut grads, *target, g.len());
                        for (r, &m) in mask.iter().enumerate() {
                            if m == want {
                                s[r * cols..(r + 1) * cols]
                                    .iter_mut()
                                    .zip(&g[r * cols..(r + 1) * cols])
                                    .for_each(|(s, d)| *s += d);
                            }
                        }
                    }
                }
                Op::Sum(x) => {
                    let s = slot(&mut grads, *x, val(x).len());
                    s.iter_mut().for_each(|s| *s += g[0]);
                }
                Op::Scale(x, factor) => {
                    let s = slot(&mut grads, *x, g.len());
                    s.iter_mut().zip(&g).for_each(|(s, d)| *s += d * factor);
                }
                Op::WeightedBce {
                    probs,
                    targets,
                    weights,
                } => {
                    let p = val(probs).data();
                    let s = slot(&mut grads, *probs, p.len());
                    for i in 0..p.len() {
                        let w = weights[i];
                        if w == 0.0 || p[i] < PROB_CLAMP || p[i] > 1.0 - PROB_CLAMP {
                            continue;
                        }
                        let (pi, y) = (p[i], targets[i]);
                        s[i] += g[0] * w * (-y / pi + (1.0 - y) / (1.0 - pi));
                    }
                }
            }
        }
        Ok(())
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

/// Step used for central differences in [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Compares tape gradients of a scalar function against central differences.
///
/// Returns the maximum over all leaf entries of
/// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`, or infinity
/// when either side is non-finite or `f` fails.
pub fn grad_check<F>(leaves: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
        let Ok(loss) = f(&mut tape, &vars) else {
            return f64::INFINITY;
        };
        if tape.backward(loss).is_err() {
            return f64::INFINITY;
        }
        vars.iter()
            .map(|v| tape.grad_or_zeros(*v).into_data())
            .collect::<Vec<_>>()
    };

    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        match f(&mut tape, &vars) {
            Ok(out) if tape.value(out).is_scalar() => tape.value(out).data()[0],
            _ => f64::NAN,
        }
    };

    let mut work = leaves.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..work.len() {
        for j in 0..work[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + GRAD_CHECK_STEP;
            let plus = eval(&work);
            work[i].data_mut()[j] = orig - GRAD_CHECK_STEP;
            let minus = eval(&work);
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * GRAD_CHECK_STEP);
            let a = analytic[i][j];
            if !a.is_finite() || !numeric.is_finite() {
                return f64::INFINITY;
            }
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(err);
        }
    }
    worst
}
