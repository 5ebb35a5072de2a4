//! Eager reverse-mode tape.
//!
//! Every op evaluates immediately and records itself on the [`Graph`], so the
//! recorded order is already a topological order. [`Graph::backward`] walks
//! the tape in reverse and accumulates adjoints only for nodes that depend on
//! a differentiable leaf.

use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    index: usize,
    graph: u64,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    MatMul(usize, usize),
    Sum(usize),
    Mean(usize),
    BroadcastRows(usize),
    Relu(usize),
    Silu(usize),
    Affine { x: usize, w: usize, b: usize },
    SquaredError(usize, usize),
    ConcatCols(Vec<usize>),
    SliceCols { src: usize, start: usize },
    Gather { table: usize, rows: Vec<usize> },
    MeanGroups { src: usize, group: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation. Single-threaded; build one per forward pass.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    graph: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` if it does not influence the output.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.graph != self.graph {
            return None;
        }
        self.grads.get(var.index).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        if var.graph != self.graph {
            return None;
        }
        self.grads.get_mut(var.index).and_then(|g| g.take())
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf (a parameter or any input we want gradients for).
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        value.check_finite("parameter")?;
        Ok(self.push(value, Op::Leaf, true))
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        value.check_finite("constant")?;
        Ok(self.push(value, Op::Leaf, false))
    }

    pub fn value(&self, var: Var) -> Result<&Tensor> {
        self.check(var)?;
        Ok(&self.nodes[var.index].value)
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            index,
            graph: self.id,
        }
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        value.check_finite(op_name(&op))?;
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        Ok(self.push(value, op, needs_grad))
    }

    fn check(&self, var: Var) -> Result<usize> {
        if var.graph != self.id || var.index >= self.nodes.len() {
            return Err(Error::ForeignVar);
        }
        Ok(var.index)
    }

    fn val(&self, index: usize) -> &Tensor {
        &self.nodes[index].value
    }

    fn same_shape(&self, a: usize, b: usize, what: &str) -> Result<()> {
        if self.val(a).shape() != self.val(b).shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.val(a).shape(),
                self.val(b).shape()
            )));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: fn(usize, usize) -> Op, f: fn(f32, f32) -> f32) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        let opv = op(a, b);
        self.same_shape(a, b, op_name(&opv))?;
        let (va, vb) = (self.val(a), self.val(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        self.record(out, opv, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub, |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul, |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, factor: f32) -> Result<Var> {
        let a = self.check(a)?;
        let out = self.val(a).map(|v| v * factor);
        self.record(out, Op::Scale(a, factor), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = (self.check(a)?, self.check(b)?);
        let (m, k) = self.val(a).dims2()?;
        let (k2, n) = self.val(b).dims2()?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul: inner dims {k} vs {k2}")));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(self.val(a).data(), self.val(b).data(), &mut out, m, k, n);
        self.record(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), &[a, b])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let out = Tensor::scalar(self.val(a).sum());
        self.record(out, Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let out = Tensor::scalar(self.val(a).mean());
        self.record(out, Op::Mean(a), &[a])
    }

    /// Repeats a vector `[n]` (or `[1,n]`) as `rows` rows.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let a = self.check(a)?;
        let (r, n) = self.val(a).dims2()?;
        if r != 1 {
            return Err(Error::Shape(format!("broadcast_rows: expected one row, got {r}")));
        }
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            data.extend_from_slice(self.val(a).data());
        }
        self.record(Tensor::matrix(rows, n, data)?, Op::BroadcastRows(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let out = self.val(a).map(|v| v.max(0.0));
        self.record(out, Op::Relu(a), &[a])
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        let a = self.check(a)?;
        let out = self.val(a).map(kernels::silu);
        self.record(out, Op::Silu(a), &[a])
    }

    /// `x · w + b` with `b` broadcast over rows.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (x, w, b) = (self.check(x)?, self.check(w)?, self.check(b)?);
        let (m, k) = self.val(x).dims2()?;
        let (k2, n) = self.val(w).dims2()?;
        if k != k2 || self.val(b).len() != n {
            return Err(Error::Shape(format!(
                "affine: x {:?}, w {:?}, b {:?}",
                self.val(x).shape(),
                self.val(w).shape(),
                self.val(b).shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(self.val(x).data(), self.val(w).data(), &mut out, m, k, n);
        kernels::add_row_bias(&mut out, self.val(b).data());
        self.record(Tensor::matrix(m, n, out)?, Op::Affine { x, w, b }, &[x, w, b])
    }

    /// Mean of squared differences, reduced to a scalar.
    pub fn squared_error(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.check(pred)?, self.check(target)?);
        self.same_shape(p, t, "squared_error")?;
        let n = self.val(p).len() as f32;
        let s: f32 = self
            .val(p)
            .data()
            .iter()
            .zip(self.val(t).data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        self.record(Tensor::scalar(s / n), Op::SquaredError(p, t), &[p, t])
    }

    /// Concatenates matrices with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&v| self.check(v)).collect::<Result<_>>()?;
        let first = idx.first().ok_or_else(|| Error::Shape("concat of nothing".into()))?;
        let (rows, _) = self.val(*first).dims2()?;
        let mut widths = Vec::with_capacity(idx.len());
        for &i in &idx {
            let (r, c) = self.val(i).dims2()?;
            if r != rows {
                return Err(Error::Shape(format!("concat_cols: row counts {rows} vs {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&i, &w) in idx.iter().zip(&widths) {
                data.extend_from_slice(&self.val(i).data()[r * w..(r + 1) * w]);
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        self.record(out, Op::ConcatCols(idx.clone()), &idx)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let a = self.check(a)?;
        let (rows, cols) = self.val(a).dims2()?;
        if start + len > cols {
            return Err(Error::Shape(format!(
                "slice_cols: {start}+{len} exceeds {cols} columns"
            )));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&self.val(a).data()[r * cols + start..r * cols + start + len]);
        }
        self.record(Tensor::matrix(rows, len, data)?, Op::SliceCols { src: a, start }, &[a])
    }

    /// Row lookup (embedding table gather).
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Result<Var> {
        let t = self.check(table)?;
        let (n_rows, d) = self.val(t).dims2()?;
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= n_rows {
                return Err(Error::Shape(format!("gather: row {r} of {n_rows}")));
            }
            data.extend_from_slice(self.val(t).row(r));
        }
        let out = Tensor::matrix(rows.len(), d, data)?;
        self.record(
            out,
            Op::Gather {
                table: t,
                rows: rows.to_vec(),
            },
            &[t],
        )
    }

    /// Averages each run of `group` consecutive rows: `[m*group, d] -> [m, d]`.
    pub fn mean_groups(&mut self, a: Var, group: usize) -> Result<Var> {
        let a = self.check(a)?;
        let (rows, d) = self.val(a).dims2()?;
        if group == 0 || rows % group != 0 {
            return Err(Error::Shape(format!("mean_groups: {rows} rows, group {group}")));
        }
        let m = rows / group;
        let inv = 1.0 / group as f32;
        let src = self.val(a).data();
        let mut data = vec![0.0; m * d];
        for (i, out) in data.chunks_exact_mut(d).enumerate() {
            for g in 0..group {
                let row = &src[(i * group + g) * d..(i * group + g + 1) * d];
                for (o, v) in out.iter_mut().zip(row) {
                    *o += v;
                }
            }
            for o in out.iter_mut() {
                *o *= inv;
            }
        }
        self.record(Tensor::matrix(m, d, data)?, Op::MeanGroups { src: a, group }, &[a])
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.check(output)?;
        if !self.val(out).is_scalar() {
            return Err(Error::NotScalar(self.val(out).shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[out] = Some(Tensor::full(self.val(out).shape(), 1.0));

        for i in (0..=out).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            graph: self.id,
            grads,
        })
    }

    fn wants(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, || g.clone());
                self.accumulate(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, || g.clone());
                self.accumulate(grads, *b, || g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                self.accumulate(grads, *a, || elementwise(g, vb, |x, y| x * y));
                self.accumulate(grads, *b, || elementwise(g, va, |x, y| x * y));
            }
            Op::Scale(a, factor) => {
                let f = *factor;
                self.accumulate(grads, *a, || g.map(|v| v * f));
            }
            Op::MatMul(a, b) => self.matmul_backward(*a, *b, g, grads)?,
            Op::Sum(a) => {
                let gv = g.data()[0];
                self.accumulate(grads, *a, || Tensor::full(self.val(*a).shape(), gv));
            }
            Op::Mean(a) => {
                let n = self.val(*a).len() as f32;
                let gv = g.data()[0] / n;
                self.accumulate(grads, *a, || Tensor::full(self.val(*a).shape(), gv));
            }
            Op::BroadcastRows(a) => {
                let (_, n) = g.dims2()?;
                self.accumulate(grads, *a, || {
                    let mut acc = vec![0.0; n];
                    for row in g.data().chunks_exact(n) {
                        for (o, v) in acc.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    Tensor::new(self.val(*a).shape().to_vec(), acc).expect("shape")
                });
            }
            Op::Relu(a) => {
                let x = self.val(*a);
                self.accumulate(grads, *a, || {
                    elementwise(g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 })
                });
            }
            Op::Silu(a) => {
                let x = self.val(*a);
                self.accumulate(grads, *a, || elementwise(g, x, |gv, xv| gv * kernels::silu_grad(xv)));
            }
            Op::Affine { x, w, b } => {
                self.matmul_backward(*x, *w, g, grads)?;
                if self.wants(*b) {
                    let (_, n) = g.dims2()?;
                    let mut acc = vec![0.0; n];
                    for row in g.data().chunks_exact(n) {
                        for (o, v) in acc.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    let t = Tensor::new(self.val(*b).shape().to_vec(), acc)?;
                    self.accumulate(grads, *b, || t);
                }
            }
            Op::SquaredError(p, t) => {
                let (vp, vt) = (self.val(*p), self.val(*t));
                let scale = 2.0 * g.data()[0] / vp.len() as f32;
                let diff = elementwise(vp, vt, |a, b| (a - b) * scale);
                if self.wants(*t) {
                    let neg = diff.map(|v| -v);
                    self.accumulate(grads, *t, || neg);
                }
                self.accumulate(grads, *p, || diff);
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = g.dims2()?;
                let mut offset = 0;
                for &part in parts {
                    let (_, w) = self.val(part).dims2()?;
                    if self.wants(part) {
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        let t = Tensor::new(self.val(part).shape().to_vec(), data)?;
                        self.accumulate(grads, part, || t);
                    }
                    offset += w;
                }
            }
            Op::SliceCols { src, start } => {
                let (rows, cols) = self.val(*src).dims2()?;
                let (_, len) = g.dims2()?;
                self.accumulate(grads, *src, || {
                    let mut t = Tensor::zeros(self.val(*src).shape());
                    for r in 0..rows {
                        t.data_mut()[r * cols + start..r * cols + start + len]
                            .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                    }
                    t
                });
            }
            Op::Gather { table, rows } => {
                let (_, d) = self.val(*table).dims2()?;
                self.accumulate(grads, *table, || {
                    let mut t = Tensor::zeros(self.val(*table).shape());
                    for (k, &r) in rows.iter().enumerate() {
                        let src = &g.data()[k * d..(k + 1) * d];
                        for (o, v) in t.data_mut()[r * d..(r + 1) * d].iter_mut().zip(src) {
                            *o += v;
                        }
                    }
                    t
                });
            }
            Op::MeanGroups { src, group } => {
                let (_, d) = g.dims2()?;
                let inv = 1.0 / *group as f32;
                self.accumulate(grads, *src, || {
                    let mut t = Tensor::zeros(self.val(*src).shape());
                    for (row, out) in t.data_mut().chunks_exact_mut(d).enumerate() {
                        let gi = row / group;
                        for (o, v) in out.iter_mut().zip(&g.data()[gi * d..(gi + 1) * d]) {
                            *o = v * inv;
                        }
                    }
                    t
                });
            }
        }
        Ok(())
    }

    fn matmul_backward(&self, a: usize, b: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let (m, k) = self.val(a).dims2()?;
        let (_, n) = self.val(b).dims2()?;
        if self.wants(a) {
            let mut da = Tensor::zeros(self.val(a).shape());
            kernels::matmul_a_bt_acc(g.data(), self.val(b).data(), da.data_mut(), m, k, n);
            self.accumulate(grads, a, || da);
        }
        if self.wants(b) {
            let mut db = Tensor::zeros(self.val(b).shape());
            kernels::matmul_at_b_acc(self.val(a).data(), g.data(), db.data_mut(), m, k, n);
            self.accumulate(grads, b, || db);
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], target: usize, make: impl FnOnce() -> Tensor) {
        if !self.wants(target) {
            return;
        }
        let contribution = make();
        match &mut grads[target] {
            Some(existing) => existing.add_assign(&contribution),
            slot @ None => *slot = Some(contribution),
        }
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("operands share a shape")
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::MatMul(..) => "matmul",
        Op::Sum(..) => "sum",
        Op::Mean(..) => "mean",
        Op::BroadcastRows(..) => "broadcast_rows",
        Op::Relu(..) => "relu",
        Op::Silu(..) => "silu",
        Op::Affine { .. } => "affine",
        Op::SquaredError(..) => "squared_error",
        Op::ConcatCols(..) => "concat_cols",
        Op::SliceCols { .. } => "slice_cols",
        Op::Gather { .. } => "gather_rows",
        Op::MeanGroups { .. } => "mean_groups",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_and_sum_forward() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![2.0])).unwrap();
        let y = g.mul(x, x).unwrap();
        assert_eq!(g.value(y).unwrap().data(), &[4.0]);

        let x = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        let s = g.sum(x).unwrap();
        assert_eq!(g.value(s).unwrap().data(), &[6.0]);
    }

    #[test]
    fn square_backward() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![3.0])).unwrap();
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn sum_of_squares_backward() {
        let mut g = Graph::new();
        let w = g.param(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let sq = g.mul(w, w).unwrap();
        let y = g.sum(sq).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_output() {
        let mut g = Graph::new();
        let w = g.param(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let sq = g.mul(w, w).unwrap();
        assert!(matches!(g.backward(sq), Err(Error::NotScalar(_))));
    }

    #[test]
    fn vars_from_another_graph_are_rejected() {
        let mut g1 = Graph::new();
        let g2 = Graph::new();
        let x = g1.param(Tensor::scalar(1.0)).unwrap();
        assert!(matches!(g2.backward(x), Err(Error::ForeignVar)));
        assert!(matches!(g2.value(x), Err(Error::ForeignVar)));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        assert!(matches!(g.add(a, b), Err(Error::Shape(_))));
        let m = g.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap()).unwrap();
        assert!(matches!(g.matmul(m, m), Err(Error::Shape(_))));
    }

    #[test]
    fn non_finite_values_are_an_error() {
        let mut g = Graph::new();
        assert!(matches!(
            g.param(Tensor::vector(vec![f32::NAN])),
            Err(Error::NonFinite(_))
        ));
        let big = g.constant(Tensor::vector(vec![f32::MAX])).unwrap();
        assert!(matches!(g.add(big, big), Err(Error::NonFinite(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let w = g.param(Tensor::vector(vec![1.0, 2.0])).unwrap();
        let c = g.constant(Tensor::vector(vec![3.0, 4.0])).unwrap();
        let p = g.mul(w, c).unwrap();
        let y = g.sum(p).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(w).unwrap().data(), &[3.0, 4.0]);
        assert!(grads.get(c).is_none());
    }
}
