//! The tape: forward evaluation records every primitive, `backward` replays
//! it in reverse.
//!
//! A [`Graph`] is built for a single example on a single thread. Nodes are
//! appended in evaluation order, which is already a topological order, so
//! the backward pass is one reverse sweep that visits each node once.

use std::collections::HashMap;

use crate::array::{matmul_nt, matmul_tn, NdArray};
use crate::error::{shape_err, DiffError, Result};
use crate::params::{Gradients, ParamId, ParamStore};

/// Additive logit for masked softmax entries. Stands in for `-inf`.
pub const MASKED: f64 = -1.0e30;

/// Entries whose additive mask is at or below this count as masked.
const MASK_CUTOFF: f64 = MASKED * 0.5;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Deliberately wrong backward rules, used as negative controls for
/// gradient checking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Sigmoid derivative scaled by 1.25.
    Sigmoid,
    /// Tanh derivative scaled by 1.25.
    Tanh,
    /// Gradient to the right operand of elementwise products dropped.
    MulRhs,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Elu(Var),
    SoftmaxRows(Var),
    HConcat(Vec<Var>),
    VConcat(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Transpose(Var),
    Reshape(Var),
    SumAll(Var),
    GroupSumRows(Var, usize),
    Nll(Var, usize, f64),
}

#[derive(Debug, Clone)]
struct Node {
    value: NdArray,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: HashMap<ParamId, Var>,
    fault: Option<Fault>,
}

/// Per-node gradients from a full backward sweep.
#[derive(Debug)]
pub struct NodeGrads {
    grads: Vec<Option<NdArray>>,
    shapes: Vec<Vec<usize>>,
}

impl NodeGrads {
    /// Gradient of the root with respect to `v` (zeros when unreachable).
    pub fn wrt(&self, v: Var) -> NdArray {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| NdArray::zeros(&self.shapes[v.0]))
    }
}

fn ensure_same(op: &'static str, a: &NdArray, b: &NdArray) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(op, a.shape(), b.shape());
    }
    Ok(())
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
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

/// Row-wise softmax of `x + mask`. Rows whose entries are all masked
/// come back as zeros.
pub fn softmax_rows_raw(x: &NdArray, mask: Option<&NdArray>) -> NdArray {
    let (m, n) = (x.rows(), x.cols());
    let mut out = vec![0.0; m * n];
    let xs = x.data();
    let ms = mask.map(NdArray::data);
    for r in 0..m {
        let row = &xs[r * n..(r + 1) * n];
        let mrow = ms.map(|d| &d[r * n..(r + 1) * n]);
        let live = |j: usize| mrow.is_none_or(|mr| mr[j] > MASK_CUTOFF);
        if !(0..n).any(live) {
            continue;
        }
        let z = |j: usize| row[j] + mrow.map_or(0.0, |mr| mr[j]);
        let max = (0..n).map(z).fold(f64::NEG_INFINITY, f64::max);
        let o = &mut out[r * n..(r + 1) * n];
        let mut total = 0.0;
        for (j, oj) in o.iter_mut().enumerate() {
            *oj = (z(j) - max).exp();
            total += *oj;
        }
        for oj in o.iter_mut() {
            *oj /= total;
        }
    }
    NdArray::new(x.shape().to_vec(), out).expect("same shape")
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &NdArray {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: NdArray, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A value that gradients never flow into.
    pub fn constant(&mut self, value: NdArray) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that gradients are tracked for.
    pub fn variable(&mut self, value: NdArray) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a parameter; repeated binds return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id), true);
        self.bound.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Sub(a, b), ng))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(out, Op::Mul(a, b), ng))
    }

    fn check_row(&self, op: &'static str, x: Var, row: Var) -> Result<()> {
        let (xv, rv) = (self.value(x), self.value(row));
        if rv.rows() != 1 || rv.cols() != xv.cols() || xv.shape().len() > 2 {
            return shape_err(op, xv.shape(), rv.shape());
        }
        Ok(())
    }

    /// `x[m×n] + row[1×n]`, broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.check_row("add_row", x, row)?;
        let (xv, rv) = (self.value(x), self.value(row));
        let n = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| a + rv.data()[i % n])
            .collect();
        let out = NdArray::new(xv.shape().to_vec(), data)?;
        let ng = self.ng(x) || self.ng(row);
        Ok(self.push(out, Op::AddRow(x, row), ng))
    }

    /// `x[m×n] ⊙ row[1×n]`, broadcast over rows.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.check_row("mul_row", x, row)?;
        let (xv, rv) = (self.value(x), self.value(row));
        let n = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| a * rv.data()[i % n])
            .collect();
        let out = NdArray::new(xv.shape().to_vec(), data)?;
        let ng = self.ng(x) || self.ng(row);
        Ok(self.push(out, Op::MulRow(x, row), ng))
    }

    /// Scales row `i` of `x[m×n]` by `col[i]` (`col` is `m×1`).
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (xv, cv) = (self.value(x), self.value(col));
        if cv.len() != xv.rows() || cv.cols() != 1 || xv.shape().len() > 2 {
            return shape_err("mul_col", xv.shape(), cv.shape());
        }
        let n = xv.cols();
        let data = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &a)| a * cv.data()[i / n])
            .collect();
        let out = NdArray::new(xv.shape().to_vec(), data)?;
        let ng = self.ng(x) || self.ng(col);
        Ok(self.push(out, Op::MulCol(x, col), ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).map(|a| a * c);
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, c), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::tanh);
        let ng = self.ng(x);
        self.push(out, Op::Tanh(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let ng = self.ng(x);
        self.push(out, Op::Sigmoid(x), ng)
    }

    pub fn elu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(elu);
        let ng = self.ng(x);
        self.push(out, Op::Elu(x), ng)
    }

    /// Softmax along the last axis. `mask` holds additive logits, `0` for
    /// live entries and [`MASKED`] for excluded ones; masked entries get
    /// exactly zero probability and zero gradient.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&NdArray>) -> Result<Var> {
        if let Some(m) = mask {
            ensure_same("softmax", self.value(x), m)?;
        }
        let out = softmax_rows_raw(self.value(x), mask);
        let ng = self.ng(x);
        Ok(self.push(out, Op::SoftmaxRows(x), ng))
    }

    /// Softmax of a 2-D array along `axis` (0 = down columns, 1 = along rows).
    pub fn softmax(&mut self, x: Var, axis: usize, mask: Option<&NdArray>) -> Result<Var> {
        match axis {
            1 => self.softmax_rows(x, mask),
            0 => {
                let xt = self.transpose(x);
                let mt = mask.map(NdArray::transpose);
                let s = self.softmax_rows(xt, mt.as_ref())?;
                Ok(self.transpose(s))
            }
            _ => Err(DiffError::Invalid {
                op: "softmax",
                msg: format!("axis {axis} out of range for a matrix"),
            }),
        }
    }

    /// Concatenates along columns; all parts share a row count.
    pub fn hconcat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return shape_err("hconcat", self.shape(parts[0]), self.shape(p));
            }
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = NdArray::matrix(rows, total, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::HConcat(parts.to_vec()), ng))
    }

    /// Stacks along rows; all parts share a column count.
    pub fn vconcat(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(parts[0]).cols();
        for &p in parts {
            if self.value(p).cols() != cols {
                return shape_err("vconcat", self.shape(parts[0]), self.shape(p));
            }
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        let out = NdArray::matrix(rows, cols, data)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(out, Op::VConcat(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.rows() {
            return Err(DiffError::Invalid {
                op: "slice_rows",
                msg: format!("rows {start}..{} of {:?}", start + len, xv.shape()),
            });
        }
        let c = xv.cols();
        let out = NdArray::matrix(len, c, xv.data()[start * c..(start + len) * c].to_vec())?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::SliceRows(x, start), ng))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(DiffError::Invalid {
                op: "slice_cols",
                msg: format!("cols {start}..{} of {:?}", start + len, xv.shape()),
            });
        }
        let (m, n) = (xv.rows(), xv.cols());
        let mut data = Vec::with_capacity(m * len);
        for r in 0..m {
            data.extend_from_slice(&xv.data()[r * n + start..r * n + start + len]);
        }
        let out = NdArray::matrix(m, len, data)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::SliceCols(x, start), ng))
    }

    /// Selects rows by index (embedding lookup). Indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= xv.rows() {
                return Err(DiffError::Invalid {
                    op: "gather_rows",
                    msg: format!("row {i} out of range for {:?}", xv.shape()),
                });
            }
            data.extend_from_slice(xv.row_slice(i));
        }
        let out = NdArray::matrix(idx.len(), c, data)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::GatherRows(x, idx.to_vec()), ng))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).transpose();
        let ng = self.ng(x);
        self.push(out, Op::Transpose(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::Reshape(x), ng))
    }

    /// Sum of all entries as a `1×1` array.
    pub fn sum(&mut self, x: Var) -> Var {
        let out = NdArray::filled(&[1, 1], self.value(x).sum());
        let ng = self.ng(x);
        self.push(out, Op::SumAll(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sums consecutive blocks of `group` rows: `[g·t × d] → [g × d]`.
    pub fn group_sum_rows(&mut self, x: Var, group: usize) -> Result<Var> {
        let xv = self.value(x);
        if group == 0 || xv.rows() % group != 0 {
            return Err(DiffError::Invalid {
                op: "group_sum_rows",
                msg: format!("{} rows not divisible into groups of {group}", xv.rows()),
            });
        }
        let (m, n) = (xv.rows(), xv.cols());
        let g = m / group;
        let mut data = vec![0.0; g * n];
        for r in 0..m {
            let dst = &mut data[(r / group) * n..(r / group + 1) * n];
            for (d, s) in dst.iter_mut().zip(xv.row_slice(r)) {
                *d += s;
            }
        }
        let out = NdArray::matrix(g, n, data)?;
        let ng = self.ng(x);
        Ok(self.push(out, Op::GroupSumRows(x, group), ng))
    }

    /// `-ln(max(p[label], floor))` for a probability row vector `p`.
    pub fn nll(&mut self, p: Var, label: usize, floor: f64) -> Result<Var> {
        let pv = self.value(p);
        if label >= pv.len() {
            return Err(DiffError::Invalid {
                op: "nll",
                msg: format!("label {label} outside {} classes", pv.len()),
            });
        }
        let out = NdArray::filled(&[1, 1], -pv.data()[label].max(floor).ln());
        let ng = self.ng(p);
        Ok(self.push(out, Op::Nll(p, label, floor), ng))
    }

    /// Gradients of a scalar root with respect to every parameter in
    /// `store`; parameters that were not reached get zeros.
    pub fn backward(&self, root: Var, store: &ParamStore) -> Result<Gradients> {
        let node_grads = self.backward_nodes(root)?;
        let mut out = Gradients::zeros(store);
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &node_grads.grads[i]) {
                *out.get_mut(*id) = g.clone();
            }
        }
        Ok(out)
    }

    /// Full reverse sweep, keeping the gradient of every node.
    pub fn backward_nodes(&self, root: Var) -> Result<NodeGrads> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(DiffError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<NdArray>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(NdArray::filled(rv.shape(), 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &gout, &mut grads)?;
            grads[i] = Some(gout);
        }
        Ok(NodeGrads {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<NdArray>], v: Var, g: NdArray) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &NdArray, grads: &mut [Option<NdArray>]) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.ng(*a) {
                    let ga = matmul_nt(g.data(), bv.data(), m, n, k);
                    self.accumulate(grads, *a, NdArray::new(av.shape().to_vec(), ga)?);
                }
                if self.ng(*b) {
                    let gb = matmul_tn(av.data(), g.data(), m, k, n);
                    self.accumulate(grads, *b, NdArray::new(bv.shape().to_vec(), gb)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.zip_map(bv, |x, y| x * y)?);
                }
                if self.ng(*b) && self.fault != Some(Fault::MulRhs) {
                    self.accumulate(grads, *b, g.zip_map(av, |x, y| x * y)?);
                }
            }
            Op::AddRow(x, row) => {
                self.accumulate(grads, *x, g.clone());
                if self.ng(*row) {
                    let rv = self.value(*row);
                    let n = g.cols();
                    let mut gr = vec![0.0; n];
                    for (i, &gi) in g.data().iter().enumerate() {
                        gr[i % n] += gi;
                    }
                    self.accumulate(grads, *row, NdArray::new(rv.shape().to_vec(), gr)?);
                }
            }
            Op::MulRow(x, row) => {
                let (xv, rv) = (self.value(*x), self.value(*row));
                let n = g.cols();
                if self.ng(*x) {
                    let gx = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| gi * rv.data()[i % n])
                        .collect();
                    self.accumulate(grads, *x, NdArray::new(xv.shape().to_vec(), gx)?);
                }
                if self.ng(*row) {
                    let mut gr = vec![0.0; n];
                    for (i, &gi) in g.data().iter().enumerate() {
                        gr[i % n] += gi * xv.data()[i];
                    }
                    self.accumulate(grads, *row, NdArray::new(rv.shape().to_vec(), gr)?);
                }
            }
            Op::MulCol(x, col) => {
                let (xv, cv) = (self.value(*x), self.value(*col));
                let n = g.cols();
                if self.ng(*x) {
                    let gx = g
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(i, &gi)| gi * cv.data()[i / n])
                        .collect();
                    self.accumulate(grads, *x, NdArray::new(xv.shape().to_vec(), gx)?);
                }
                if self.ng(*col) {
                    let mut gc = vec![0.0; cv.len()];
                    for (i, &gi) in g.data().iter().enumerate() {
                        gc[i / n] += gi * xv.data()[i];
                    }
                    self.accumulate(grads, *col, NdArray::new(cv.shape().to_vec(), gc)?);
                }
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.accumulate(grads, *x, g.map(|v| v * c));
            }
            Op::Tanh(x) => {
                let k = if self.fault == Some(Fault::Tanh) { 1.25 } else { 1.0 };
                self.accumulate(grads, *x, g.zip_map(y, |gi, yi| k * gi * (1.0 - yi * yi))?);
            }
            Op::Sigmoid(x) => {
                let k = if self.fault == Some(Fault::Sigmoid) { 1.25 } else { 1.0 };
                self.accumulate(grads, *x, g.zip_map(y, |gi, yi| k * gi * yi * (1.0 - yi))?);
            }
            Op::Elu(x) => {
                let xv = self.value(*x);
                let gx = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(&gi, &xi)| if xi > 0.0 { gi } else { gi * xi.exp() })
                    .collect();
                self.accumulate(grads, *x, NdArray::new(xv.shape().to_vec(), gx)?);
            }
            Op::SoftmaxRows(x) => {
                let (m, n) = (y.rows(), y.cols());
                let mut gx = vec![0.0; m * n];
                for r in 0..m {
                    let yr = &y.data()[r * n..(r + 1) * n];
                    let gr = &g.data()[r * n..(r + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        gx[r * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *x, NdArray::new(y.shape().to_vec(), gx)?);
            }
            Op::HConcat(parts) => {
                let rows = g.rows();
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let c = pv.cols();
                    if self.ng(p) {
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                        }
                        self.accumulate(grads, p, NdArray::new(pv.shape().to_vec(), d)?);
                    }
                    offset += c;
                }
            }
            Op::VConcat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let len = pv.len();
                    if self.ng(p) {
                        let d = g.data()[offset..offset + len].to_vec();
                        self.accumulate(grads, p, NdArray::new(pv.shape().to_vec(), d)?);
                    }
                    offset += len;
                }
            }
            Op::SliceRows(x, start) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut d = vec![0.0; xv.len()];
                d[start * c..start * c + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *x, NdArray::new(xv.shape().to_vec(), d)?);
            }
            Op::SliceCols(x, start) => {
                let xv = self.value(*x);
                let (m, n, len) = (xv.rows(), xv.cols(), g.cols());
                let mut d = vec![0.0; xv.len()];
                for r in 0..m {
                    d[r * n + start..r * n + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                self.accumulate(grads, *x, NdArray::new(xv.shape().to_vec(), d)?);
            }
            Op::GatherRows(x, idx) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut d = vec![0.0; xv.len()];
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..c {
                        d[i * c + j] += g.data()[k * c + j];
                    }
                }
                self.accumulate(grads, *x, NdArray::new(xv.shape().to_vec(), d)?);
            }
            Op::Transpose(x) => {
                let xv = self.value(*x);
                let t = g.transpose();
                self.accumulate(grads, *x, t.reshape(xv.shape())?);
            }
            Op::Reshape(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, g.reshape(xv.shape())?);
            }
            Op::SumAll(x) => {
                let xv = self.value(*x);
                self.accumulate(grads, *x, NdArray::filled(xv.shape(), g.item()));
            }
            Op::GroupSumRows(x, group) => {
                let xv = self.value(*x);
                let n = xv.cols();
                let mut d = Vec::with_capacity(xv.len());
                for r in 0..xv.rows() {
                    d.extend_from_slice(&g.data()[(r / group) * n..(r / group + 1) * n]);
                }
                self.accumulate(grads, *x, NdArray::new(xv.shape().to_vec(), d)?);
            }
            Op::Nll(p, label, floor) => {
                let pv = self.value(*p);
                let mut d = vec![0.0; pv.len()];
                let pl = pv.data()[*label];
                if pl >= *floor {
                    d[*label] = -g.item() / pl;
                }
                self.accumulate(grads, *p, NdArray::new(pv.shape().to_vec(), d)?);
            }
        }
        Ok(())
    }
}
