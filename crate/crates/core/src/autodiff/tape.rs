use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;

use crate::array::DenseArray;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
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
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Abs(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    LogSumExpRows(Var),
    BroadcastCols(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: DenseArray,
}

/// Reverse-mode record of one forward computation.
///
/// Nodes are appended in evaluation order, so the node list is always a
/// topological order. A tape supports exactly one backward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    output: Option<Var>,
    consumed: bool,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-row `log Σ_j exp(x_ij)`, shifted by the row max.
pub fn logsumexp_rows(x: &DenseArray) -> DenseArray {
    let mut out = DenseArray::zeros(x.rows(), 1);
    for r in 0..x.rows() {
        out.set(r, 0, logsumexp(x.row(r)));
    }
    out
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s: f64 = xs.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
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

    pub fn value(&self, v: Var) -> &DenseArray {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: DenseArray) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    /// A value that receives no gradient bookkeeping beyond its adjoint.
    pub fn constant(&mut self, value: DenseArray) -> Var {
        self.push(Op::Leaf, value)
    }

    /// A named trainable leaf; its adjoint is reported by name.
    pub fn param(&mut self, name: &str, value: DenseArray) -> Var {
        let v = self.push(Op::Leaf, value);
        self.params.push((String::from(name), v));
        v
    }

    /// Mark the node whose value [`Tape::backward`] differentiates.
    pub fn set_output(&mut self, v: Var) {
        self.output = Some(v);
    }

    pub fn output(&self) -> Option<Var> {
        self.output
    }

    /// Value of the designated output, which must be 1x1.
    pub fn output_scalar(&self) -> f64 {
        let v = self.output.expect("tape has no output");
        self.value(v).item()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(Op::MatMulT(a, b), value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).same_shape(self.value(b), "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a, b), value))
    }

    /// `a + 1·row`, broadcasting a `1 x m` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(Error::Shape {
                context: "add_row",
                expected: (1, av.cols()),
                found: rv.shape(),
            });
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (o, b) in value.row_mut(r).iter_mut().zip(rv.data()) {
                *o += b;
            }
        }
        Ok(self.push(Op::AddRow(a, row), value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).same_shape(self.value(b), "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.value(a).same_shape(self.value(b), "mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.push(Op::Scale(a, c), value)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|v| v + c);
        self.push(Op::AddScalar(a), value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        self.push(Op::Relu(a), value)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(Op::Tanh(a), value)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.push(Op::Exp(a), value)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::ln);
        self.push(Op::Log(a), value)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v * v);
        self.push(Op::Square(a), value)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.push(Op::Abs(a), value)
    }

    /// `log(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.push(Op::Softplus(a), value)
    }

    /// Hard clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).map(|v| v.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), value)
    }

    /// Sum of all entries, as 1x1.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = DenseArray::scalar(self.value(a).sum());
        self.push(Op::Sum(a), value)
    }

    /// Mean of all entries, as 1x1.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = DenseArray::scalar(v.sum() / v.len() as f64);
        self.push(Op::Mean(a), value)
    }

    /// Per-row sum, `n x m -> n x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let mut value = DenseArray::zeros(v.rows(), 1);
        for r in 0..v.rows() {
            value.set(r, 0, v.row(r).iter().sum());
        }
        self.push(Op::SumCols(a), value)
    }

    /// Per-row log-sum-exp, `n x m -> n x 1`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let value = logsumexp_rows(self.value(a));
        self.push(Op::LogSumExpRows(a), value)
    }

    /// Repeat an `n x 1` column `m` times.
    pub fn broadcast_cols(&mut self, a: Var, m: usize) -> Result<Var> {
        let v = self.value(a);
        if v.cols() != 1 {
            return Err(Error::Shape {
                context: "broadcast_cols",
                expected: (v.rows(), 1),
                found: v.shape(),
            });
        }
        let mut value = DenseArray::zeros(v.rows(), m);
        for r in 0..v.rows() {
            let x = v.get(r, 0);
            value.row_mut(r).iter_mut().for_each(|o| *o = x);
        }
        Ok(self.push(Op::BroadcastCols(a), value))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let arrays: Vec<&DenseArray> = parts.iter().map(|&p| self.value(p)).collect();
        let value = DenseArray::hstack(&arrays)?;
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        if start > end || end > v.cols() {
            return Err(Error::Shape {
                context: "slice_cols",
                expected: (v.rows(), end),
                found: v.shape(),
            });
        }
        let value = v.slice_cols(start, end);
        Ok(self.push(Op::SliceCols(a, start, end), value))
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        if start > end || end > v.rows() {
            return Err(Error::Shape {
                context: "slice_rows",
                expected: (end, v.cols()),
                found: v.shape(),
            });
        }
        let cols = v.cols();
        let value = DenseArray::from_vec(end - start, cols, v.data()[start * cols..end * cols].to_vec())?;
        Ok(self.push(Op::SliceRows(a, start), value))
    }

    /// Backward pass from the designated output.
    pub fn backward(&mut self, output_adjoint: &DenseArray) -> Result<Gradients> {
        let out = self.output.ok_or(Error::Config("tape has no designated output".into()))?;
        self.backward_from(out, output_adjoint)
    }

    /// Backward pass seeded at `out`. Consumes the tape's single replay.
    pub fn backward_from(&mut self, out: Var, output_adjoint: &DenseArray) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        self.value(out).same_shape(output_adjoint, "backward seed")?;
        self.consumed = true;

        let mut adj: Vec<Option<DenseArray>> = vec![None; self.nodes.len()];
        adj[out.0] = Some(output_adjoint.clone());

        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            let mut acc = |v: Var, delta: DenseArray| match &mut adj[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, g.matmul_t(bv)?);
                    acc(*b, av.t_matmul(&g)?);
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, g.matmul(bv)?);
                    acc(*b, g.t_matmul(av)?);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::AddRow(a, row) => {
                    let mut rg = DenseArray::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, x) in rg.data_mut().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    acc(*row, rg);
                    acc(*a, g);
                }
                Op::Sub(a, b) => {
                    acc(*b, g.scale(-1.0));
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    acc(*a, g.zip_map(bv, |x, y| x * y));
                    acc(*b, g.zip_map(av, |x, y| x * y));
                }
                Op::Scale(a, c) => acc(*a, g.scale(*c)),
                Op::AddScalar(a) => acc(*a, g),
                Op::Relu(a) => {
                    let av = &self.nodes[a.0].value;
                    acc(*a, g.zip_map(av, |x, y| if y > 0.0 { x } else { 0.0 }));
                }
                Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |x, t| x * (1.0 - t * t))),
                Op::Exp(a) => acc(*a, g.zip_map(&node.value, |x, e| x * e)),
                Op::Log(a) => {
                    let av = &self.nodes[a.0].value;
                    acc(*a, g.zip_map(av, |x, y| x / y));
                }
                Op::Square(a) => {
                    let av = &self.nodes[a.0].value;
                    acc(*a, g.zip_map(av, |x, y| 2.0 * x * y));
                }
                Op::Abs(a) => {
                    let av = &self.nodes[a.0].value;
                    acc(*a, g.zip_map(av, |x, y| x * y.signum() * f64::from(y != 0.0)));
                }
                Op::Softplus(a) => {
                    let av = &self.nodes[a.0].value;
                    acc(*a, g.zip_map(av, |x, y| x * sigmoid(y)));
                }
                Op::Clamp(a, lo, hi) => {
                    let av = &self.nodes[a.0].value;
                    let (lo, hi) = (*lo, *hi);
                    acc(
                        *a,
                        g.zip_map(av, |x, y| if y >= lo && y <= hi { x } else { 0.0 }),
                    );
                }
                Op::Sum(a) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    acc(*a, DenseArray::filled(r, c, g.item()));
                }
                Op::Mean(a) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    acc(*a, DenseArray::filled(r, c, g.item() / (r * c) as f64));
                }
                Op::SumCols(a) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    let mut d = DenseArray::zeros(r, c);
                    for i in 0..r {
                        let gi = g.get(i, 0);
                        d.row_mut(i).iter_mut().for_each(|o| *o = gi);
                    }
                    acc(*a, d);
                }
                Op::LogSumExpRows(a) => {
                    let av = &self.nodes[a.0].value;
                    let mut d = DenseArray::zeros(av.rows(), av.cols());
                    for i in 0..av.rows() {
                        let lse = node.value.get(i, 0);
                        let gi = g.get(i, 0);
                        for (o, &x) in d.row_mut(i).iter_mut().zip(av.row(i)) {
                            *o = gi * (x - lse).exp();
                        }
                    }
                    acc(*a, d);
                }
                Op::BroadcastCols(a) => {
                    let mut d = DenseArray::zeros(g.rows(), 1);
                    for i in 0..g.rows() {
                        d.set(i, 0, g.row(i).iter().sum());
                    }
                    acc(*a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let w = self.nodes[p.0].value.cols();
                        acc(*p, g.slice_cols(start, start + w));
                        start += w;
                    }
                }
                Op::SliceCols(a, start, end) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    let mut d = DenseArray::zeros(r, c);
                    for i in 0..r {
                        d.row_mut(i)[*start..*end].copy_from_slice(g.row(i));
                    }
                    acc(*a, d);
                }
                Op::SliceRows(a, start) => {
                    let (r, c) = self.nodes[a.0].value.shape();
                    let mut d = DenseArray::zeros(r, c);
                    d.data_mut()[*start * c..*start * c + g.len()].copy_from_slice(g.data());
                    acc(*a, d);
                }
            }
        }

        let mut by_name = BTreeMap::new();
        for (name, v) in &self.params {
            let shape = self.nodes[v.0].value.shape();
            let grad = match adj[v.0].clone() {
                Some(g) if g.shape() == shape => g,
                _ => DenseArray::zeros(shape.0, shape.1),
            };
            by_name.insert(name.clone(), grad);
        }
        Ok(Gradients { by_name, adjoints: adj })
    }
}

/// Result of a backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_name: BTreeMap<String, DenseArray>,
    adjoints: Vec<Option<DenseArray>>,
}

impl Gradients {
    /// Gradient of a named parameter leaf.
    pub fn param(&self, name: &str) -> Option<&DenseArray> {
        self.by_name.get(name)
    }

    /// Adjoint of any leaf (constants included); `None` if it received none.
    pub fn leaf(&self, v: Var) -> Option<&DenseArray> {
        self.adjoints.get(v.0).and_then(|a| a.as_ref())
    }

    /// Gradients aligned with the entries of `params`, zeros where absent.
    pub fn for_params(&self, params: &super::ParamSet) -> Vec<DenseArray> {
        params
            .iter()
            .map(|(name, value)| {
                self.by_name
                    .get(name)
                    .cloned()
                    .unwrap_or_else(|| DenseArray::zeros(value.rows(), value.cols()))
            })
            .collect()
    }
}
