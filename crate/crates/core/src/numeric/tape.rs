//! Reverse-mode differentiation over a linear tape.
//!
//! Every value produced during a forward pass lives in the tape's arena and is
//! addressed by a [`Var`]. A recording tape also stores each operation with the
//! data its gradient rule needs; [`Tape::backward`] then replays the records in
//! reverse order, visiting each one exactly once. A non-recording tape
//! ([`Tape::inference`]) evaluates the same operations without keeping any
//! gradient bookkeeping.

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use super::tensor::{gemm, log_softmax_rows, softmax_rows, Tensor};
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

/// Handle to a value stored on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    tape: u32,
    index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics.
    Train,
    /// Normalize with running statistics.
    Eval,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Clamp(usize, f64, f64),
    Softmax(usize),
    LogSoftmax(usize),
    Sum(usize),
    Mean(usize),
    SumRows(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows(usize, Vec<usize>),
    SliceCols(usize, usize),
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    SegmentMax {
        x: usize,
        argmax: Vec<usize>,
    },
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape {
    id: u32,
    recording: bool,
    verify_finite: bool,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// A tape that records operations for [`Tape::backward`].
    pub fn new() -> Self {
        Self::with_recording(true)
    }

    /// A tape that only evaluates values.
    pub fn inference() -> Self {
        Self::with_recording(false)
    }

    fn with_recording(recording: bool) -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            recording,
            verify_finite: cfg!(debug_assertions),
            nodes: Vec::new(),
        }
    }

    /// Turns NaN/Inf detection on every operation on or off.
    pub fn set_verify_finite(&mut self, on: bool) {
        self.verify_finite = on;
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable input; receives a gradient on backward.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.leaf_shared(Arc::new(value))
    }

    pub fn leaf_shared(&mut self, value: Arc<Tensor>) -> Var {
        let needs_grad = self.recording;
        self.push_node(value, Op::Leaf, needs_grad)
    }

    /// A constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(Arc::new(value), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        &self.nodes[v.index].value
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id {
            return Err(Error::ForeignVar);
        }
        Ok(v.index)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    fn push_node(&mut self, value: Arc<Tensor>, op: Op, needs_grad: bool) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self.id,
            index,
        }
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        if self.verify_finite && !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let needs_grad = self.recording && inputs.iter().any(|&i| self.nodes[i].needs_grad);
        let op = if needs_grad { op } else { Op::Leaf };
        Ok(self.push_node(Arc::new(value), op, needs_grad))
    }

    fn same_shape(&self, op: &'static str, a: usize, b: usize) -> Result<()> {
        let (sa, sb) = (self.val(a).shape(), self.val(b).shape());
        if sa != sb {
            return Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn map_unary(&mut self, name: &'static str, a: Var, op: fn(usize) -> Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let a = self.idx(a)?;
        let x = self.val(a);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(name, out, op(a), &[a])
    }

    fn zip_binary(&mut self, name: &'static str, a: Var, b: Var, op: fn(usize, usize) -> Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (a, b) = (self.idx(a)?, self.idx(b)?);
        self.same_shape(name, a, b)?;
        let (x, y) = (self.val(a), self.val(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        self.push(name, out, op(a, b), &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = super::tensor::matmul(self.val(ia), self.val(ib))?;
        self.push("matmul", out, Op::MatMul(ia, ib), &[ia, ib])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_binary("add", a, b, Op::Add, |p, q| p + q)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_binary("sub", a, b, Op::Sub, |p, q| p - q)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_binary("mul", a, b, Op::Mul, |p, q| p * q)
    }

    /// Adds a `1 x c` row to every row of an `r x c` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (ia, ir) = (self.idx(a)?, self.idx(row)?);
        let x = self.val(ia);
        let (r, c) = x.require_matrix("add_row")?;
        let rv = self.val(ir);
        if rv.shape() != [1, c] {
            return Err(Error::Shape {
                op: "add_row",
                lhs: x.shape().to_vec(),
                rhs: rv.shape().to_vec(),
            });
        }
        let mut data = x.data().to_vec();
        for i in 0..r {
            for (d, b) in data[i * c..(i + 1) * c].iter_mut().zip(rv.data()) {
                *d += b;
            }
        }
        let out = Tensor::matrix(r, c, data)?;
        self.push("add_row", out, Op::AddRow(ia, ir), &[ia, ir])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = self.val(ia);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v * k).collect())?;
        self.push("scale", out, Op::Scale(ia, k), &[ia])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map_unary("relu", a, Op::Relu, |v| v.max(0.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map_unary("exp", a, Op::Exp, f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map_unary("log", a, Op::Log, f64::ln)
    }

    /// Elementwise clamp; the gradient is zero outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = self.val(ia);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| v.clamp(lo, hi)).collect())?;
        self.push("clamp", out, Op::Clamp(ia, lo, hi), &[ia])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = softmax_rows(self.val(ia))?;
        self.push("softmax", out, Op::Softmax(ia), &[ia])
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = log_softmax_rows(self.val(ia))?;
        self.push("log_softmax", out, Op::LogSoftmax(ia), &[ia])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = Tensor::scalar(self.val(ia).data().iter().sum());
        self.push("sum", out, Op::Sum(ia), &[ia])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = self.val(ia);
        if x.is_empty() {
            return Err(Error::invalid("mean of an empty tensor"));
        }
        let out = Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64);
        self.push("mean", out, Op::Mean(ia), &[ia])
    }

    /// Column sums of an `r x c` matrix as a `1 x c` row.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = self.val(ia);
        let (r, c) = x.require_matrix("sum_rows")?;
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, v) in out.iter_mut().zip(x.row_slice(i)) {
                *o += v;
            }
        }
        self.push("sum_rows", Tensor::row(out), Op::SumRows(ia), &[ia])
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&v| self.idx(v)).collect::<Result<_>>()?;
        let first = idx.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let rows = self.val(*first).require_matrix("concat_cols")?.0;
        let mut widths = Vec::with_capacity(idx.len());
        for &i in &idx {
            let (r, c) = self.val(i).require_matrix("concat_cols")?;
            if r != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.val(*first).shape().to_vec(),
                    rhs: self.val(i).shape().to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &i in &idx {
                data.extend_from_slice(self.val(i).row_slice(r));
            }
        }
        let out = Tensor::matrix(rows, total, data)?;
        self.push("concat_cols", out, Op::ConcatCols(idx.clone()), &idx)
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let idx: Vec<usize> = parts.iter().map(|&v| self.idx(v)).collect::<Result<_>>()?;
        let first = idx.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let cols = self.val(*first).require_matrix("concat_rows")?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &i in &idx {
            let (r, c) = self.val(i).require_matrix("concat_rows")?;
            if c != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: self.val(*first).shape().to_vec(),
                    rhs: self.val(i).shape().to_vec(),
                });
            }
            rows += r;
            data.extend_from_slice(self.val(i).data());
        }
        let out = Tensor::matrix(rows, cols, data)?;
        self.push("concat_rows", out, Op::ConcatRows(idx.clone()), &idx)
    }

    /// Selects rows by index (repeats allowed); broadcasting a `1 x c` row
    /// over `k` rows is `gather_rows(row, &[0; k])`.
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = self.val(ia);
        let (r, c) = x.require_matrix("gather_rows")?;
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= r {
                return Err(Error::invalid(format!("gather_rows: row {i} out of range for {r} rows")));
            }
            data.extend_from_slice(x.row_slice(i));
        }
        let out = Tensor::matrix(rows.len(), c, data)?;
        self.push("gather_rows", out, Op::GatherRows(ia, rows.to_vec()), &[ia])
    }

    pub fn broadcast_row(&mut self, row: Var, times: usize) -> Result<Var> {
        let r = self.value(row).rows();
        if r != 1 {
            return Err(Error::Shape {
                op: "broadcast_row",
                lhs: self.value(row).shape().to_vec(),
                rhs: vec![1, self.value(row).cols()],
            });
        }
        self.gather_rows(row, &vec![0; times])
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let x = self.val(ia);
        let (r, c) = x.require_matrix("slice_cols")?;
        if start > end || end > c {
            return Err(Error::invalid(format!("slice_cols: {start}..{end} out of range for {c} columns")));
        }
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&x.row_slice(i)[start..end]);
        }
        let out = Tensor::matrix(r, end - start, data)?;
        self.push("slice_cols", out, Op::SliceCols(ia, start), &[ia])
    }

    /// Per-feature batch normalization of an `n x d` matrix with `1 x d`
    /// scale and shift.
    ///
    /// In [`BnMode::Train`] the batch mean and (biased) variance are used and
    /// returned so the caller can fold them into its running statistics. In
    /// [`BnMode::Eval`] the supplied running statistics are used.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BnMode,
        running: (&[f64], &[f64]),
        eps: f64,
    ) -> Result<(Var, Option<(Vec<f64>, Vec<f64>)>)> {
        let (ix, ig, ib) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let xv = self.val(ix);
        let (n, d) = xv.require_matrix("batch_norm")?;
        for i in [ig, ib] {
            if self.val(i).shape() != [1, d] {
                return Err(Error::Shape {
                    op: "batch_norm",
                    lhs: xv.shape().to_vec(),
                    rhs: self.val(i).shape().to_vec(),
                });
            }
        }
        if running.0.len() != d || running.1.len() != d {
            return Err(Error::Shape {
                op: "batch_norm",
                lhs: xv.shape().to_vec(),
                rhs: vec![running.0.len(), running.1.len()],
            });
        }
        let (mean, var) = match mode {
            BnMode::Train => {
                if n == 0 {
                    return Err(Error::invalid("batch_norm: empty batch"));
                }
                let mut mean = vec![0.0; d];
                for i in 0..n {
                    for (m, v) in mean.iter_mut().zip(xv.row_slice(i)) {
                        *m += v;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                let mut var = vec![0.0; d];
                for i in 0..n {
                    for ((s, v), m) in var.iter_mut().zip(xv.row_slice(i)).zip(&mean) {
                        *s += (v - m) * (v - m);
                    }
                }
                var.iter_mut().for_each(|s| *s /= n as f64);
                (mean, var)
            }
            BnMode::Eval => (running.0.to_vec(), running.1.to_vec()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (g, b) = (self.val(ig).data(), self.val(ib).data());
        let mut xhat = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        for i in 0..n {
            let row = xv.row_slice(i);
            for j in 0..d {
                let h = (row[j] - mean[j]) * inv_std[j];
                xhat[i * d + j] = h;
                out[i * d + j] = g[j] * h + b[j];
            }
        }
        let out = Tensor::matrix(n, d, out)?;
        let train = mode == BnMode::Train;
        let op = Op::BatchNorm {
            x: ix,
            gamma: ig,
            beta: ib,
            xhat,
            inv_std,
            train,
        };
        let v = self.push("batch_norm", out, op, &[ix, ig, ib])?;
        Ok((v, train.then_some((mean, var))))
    }

    /// Row `k` of the result is the elementwise maximum over the rows `i`
    /// of `x` with `indicator[i] == k`. The gradient flows to the lowest
    /// row index attaining each maximum.
    pub fn segment_max(&mut self, x: Var, indicator: &[usize], count: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let xv = self.val(ix);
        let (n, d) = xv.require_matrix("segment_max")?;
        if indicator.len() != n {
            return Err(Error::Shape {
                op: "segment_max",
                lhs: xv.shape().to_vec(),
                rhs: vec![indicator.len()],
            });
        }
        let mut argmax = vec![usize::MAX; count * d];
        for (i, &k) in indicator.iter().enumerate() {
            if k >= count {
                return Err(Error::invalid(format!("segment_max: instance id {k} outside [0, {count})")));
            }
            let row = xv.row_slice(i);
            let slots = &mut argmax[k * d..(k + 1) * d];
            for (j, slot) in slots.iter_mut().enumerate() {
                if *slot == usize::MAX || row[j] > xv.data()[*slot * d + j] {
                    *slot = i;
                }
            }
        }
        let empty: Vec<usize> = (0..count).filter(|&k| argmax[k * d..(k + 1) * d].contains(&usize::MAX)).collect();
        if d > 0 && !empty.is_empty() {
            return Err(Error::EmptySegment(empty));
        }
        let data = argmax.iter().enumerate().map(|(p, &i)| xv.data()[i * d + p % d]).collect();
        let out = Tensor::matrix(count, d, data)?;
        self.push("segment_max", out, Op::SegmentMax { x: ix, argmax }, &[ix])
    }

    /// Gradients of a scalar `loss` with respect to every leaf.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.recording {
            return Err(Error::NoTape);
        }
        let root = self.idx(loss)?;
        let lv = self.val(root);
        if lv.len() != 1 {
            return Err(Error::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root].needs_grad {
            grads[root] = Some(Tensor::full(lv.shape(), 1.0));
        }
        for i in (0..=root).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(i, &g, &mut grads)?;
        }
        Ok(Gradients {
            tape: self.id,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
        if !self.nodes[i].needs_grad {
            return;
        }
        match &mut grads[i] {
            Some(existing) => existing.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn backprop(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &self.nodes[i].value;
        let gd = g.data();
        let like = |idx: usize, data: Vec<f64>| Tensor::new(self.val(idx).shape().to_vec(), data);
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (m, k) = (av.rows(), av.cols());
                let n = bv.cols();
                if self.nodes[*a].needs_grad {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, gd, false, bv.data(), true, 0.0, &mut da);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da)?);
                }
                if self.nodes[*b].needs_grad {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), true, gd, false, 0.0, &mut db);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, like(*b, gd.iter().map(|v| -v).collect())?);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a).data(), self.val(*b).data());
                if self.nodes[*a].needs_grad {
                    self.accumulate(grads, *a, like(*a, gd.iter().zip(bv).map(|(g, y)| g * y).collect())?);
                }
                if self.nodes[*b].needs_grad {
                    self.accumulate(grads, *b, like(*b, gd.iter().zip(av).map(|(g, x)| g * x).collect())?);
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[*row].needs_grad {
                    let c = g.cols();
                    let mut dr = vec![0.0; c];
                    for r in 0..g.rows() {
                        for (d, v) in dr.iter_mut().zip(g.row_slice(r)) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *row, Tensor::row(dr));
                }
            }
            Op::Scale(a, k) => {
                self.accumulate(grads, *a, like(*a, gd.iter().map(|v| v * k).collect())?);
            }
            Op::Relu(a) => {
                let x = self.val(*a).data();
                let d = gd.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }).collect();
                self.accumulate(grads, *a, like(*a, d)?);
            }
            Op::Exp(a) => {
                let d = gd.iter().zip(out.data()).map(|(g, y)| g * y).collect();
                self.accumulate(grads, *a, like(*a, d)?);
            }
            Op::Log(a) => {
                let x = self.val(*a).data();
                let d = gd.iter().zip(x).map(|(g, x)| g / x).collect();
                self.accumulate(grads, *a, like(*a, d)?);
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.val(*a).data();
                let d = gd
                    .iter()
                    .zip(x)
                    .map(|(g, x)| if *x >= *lo && *x <= *hi { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, like(*a, d)?);
            }
            Op::Softmax(a) => {
                let (r, c) = (out.rows(), out.cols());
                let y = out.data();
                let mut d = vec![0.0; r * c];
                for row in 0..r {
                    let s = row * c..(row + 1) * c;
                    let dot: f64 = gd[s.clone()].iter().zip(&y[s.clone()]).map(|(g, y)| g * y).sum();
                    for j in s {
                        d[j] = y[j] * (gd[j] - dot);
                    }
                }
                self.accumulate(grads, *a, like(*a, d)?);
            }
            Op::LogSoftmax(a) => {
                let (r, c) = (out.rows(), out.cols());
                let y = out.data();
                let mut d = vec![0.0; r * c];
                for row in 0..r {
                    let s = row * c..(row + 1) * c;
                    let total: f64 = gd[s.clone()].iter().sum();
                    for j in s {
                        d[j] = gd[j] - y[j].exp() * total;
                    }
                }
                self.accumulate(grads, *a, like(*a, d)?);
            }
            Op::Sum(a) => {
                let n = self.val(*a).len();
                self.accumulate(grads, *a, like(*a, vec![gd[0]; n])?);
            }
            Op::Mean(a) => {
                let n = self.val(*a).len();
                self.accumulate(grads, *a, like(*a, vec![gd[0] / n as f64; n])?);
            }
            Op::SumRows(a) => {
                let r = self.val(*a).rows();
                let mut d = Vec::with_capacity(r * gd.len());
                for _ in 0..r {
                    d.extend_from_slice(gd);
                }
                self.accumulate(grads, *a, like(*a, d)?);
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = self.val(p).cols();
                    if self.nodes[p].needs_grad {
                        let mut d = Vec::with_capacity(rows * c);
                        for r in 0..rows {
                            d.extend_from_slice(&g.row_slice(r)[offset..offset + c]);
                        }
                        self.accumulate(grads, p, like(p, d)?);
                    }
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.val(p).len();
                    if self.nodes[p].needs_grad {
                        self.accumulate(grads, p, like(p, gd[offset..offset + n].to_vec())?);
                    }
                    offset += n;
                }
            }
            Op::GatherRows(a, rows) => {
                let src = self.val(*a);
                let c = src.cols();
                let mut d = vec![0.0; src.len()];
                for (k, &r) in rows.iter().enumerate() {
                    for (t, v) in d[r * c..(r + 1) * c].iter_mut().zip(g.row_slice(k)) {
                        *t += v;
                    }
                }
                self.accumulate(grads, *a, like(*a, d)?);
            }
            Op::SliceCols(a, start) => {
                let src = self.val(*a);
                let (r, c) = (src.rows(), src.cols());
                let w = g.cols();
                let mut d = vec![0.0; r * c];
                for row in 0..r {
                    d[row * c + start..row * c + start + w].copy_from_slice(g.row_slice(row));
                }
                self.accumulate(grads, *a, like(*a, d)?);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let (n, d) = (g.rows(), g.cols());
                let gam = self.val(*gamma).data();
                let mut dgamma = vec![0.0; d];
                let mut dbeta = vec![0.0; d];
                for r in 0..n {
                    for j in 0..d {
                        let gv = gd[r * d + j];
                        dgamma[j] += gv * xhat[r * d + j];
                        dbeta[j] += gv;
                    }
                }
                if self.nodes[*x].needs_grad {
                    let mut dx = vec![0.0; n * d];
                    if *train {
                        let nf = n as f64;
                        for j in 0..d {
                            // dxhat = dy * gamma; sums over the batch
                            let sum_dxhat = dbeta[j] * gam[j];
                            let sum_dxhat_xhat = dgamma[j] * gam[j];
                            for r in 0..n {
                                let dxhat = gd[r * d + j] * gam[j];
                                dx[r * d + j] =
                                    inv_std[j] / nf * (nf * dxhat - sum_dxhat - xhat[r * d + j] * sum_dxhat_xhat);
                            }
                        }
                    } else {
                        for r in 0..n {
                            for j in 0..d {
                                dx[r * d + j] = gd[r * d + j] * gam[j] * inv_std[j];
                            }
                        }
                    }
                    self.accumulate(grads, *x, like(*x, dx)?);
                }
                self.accumulate(grads, *gamma, Tensor::row(dgamma));
                self.accumulate(grads, *beta, Tensor::row(dbeta));
            }
            Op::SegmentMax { x, argmax } => {
                let d = g.cols();
                let mut dx = vec![0.0; self.val(*x).len()];
                for (p, &i) in argmax.iter().enumerate() {
                    dx[i * d + p % d] += gd[p];
                }
                self.accumulate(grads, *x, like(*x, dx)?);
            }
        }
        Ok(())
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    tape: u32,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        assert_eq!(v.tape, self.tape, "variable belongs to a different tape");
        match &self.grads[v.index] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.index]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        assert_eq!(v.tape, self.tape, "variable belongs to a different tape");
        match self.grads[v.index].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[v.index]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 6.0);
    }

    #[test]
    fn relu_gradient_at_negative_input() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(-1.0));
        let y = t.relu(x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(x).item(), 0.0);
    }

    #[test]
    fn backward_errors() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(vec![1.0, 2.0]));
        let y = t.relu(x).unwrap();
        assert!(matches!(t.backward(y), Err(Error::NotScalar(_))));

        let mut inf = Tape::inference();
        let x = inf.leaf(Tensor::scalar(1.0));
        assert!(matches!(inf.backward(x), Err(Error::NoTape)));
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let unused = t.leaf(Tensor::row(vec![1.0, 1.0, 1.0]));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.wrt(unused), Tensor::zeros(&[1, 3]));
    }

    #[test]
    fn shape_error_names_op_and_shapes() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(&[2, 3]));
        let b = t.leaf(Tensor::zeros(&[3, 2]));
        let msg = t.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("add") && msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn foreign_var_rejected() {
        let mut t1 = Tape::new();
        let mut t2 = Tape::new();
        let x = t1.leaf(Tensor::scalar(1.0));
        assert!(matches!(t2.relu(x), Err(Error::ForeignVar)));
    }

    #[test]
    fn segment_max_forward_and_empty_ids() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_rows(&[vec![1.0], vec![5.0], vec![3.0]]).unwrap());
        let y = t.segment_max(x, &[0, 0, 1], 2).unwrap();
        assert_eq!(t.value(y).data(), &[5.0, 3.0]);
        match t.segment_max(x, &[0, 0, 2], 4) {
            Err(Error::EmptySegment(ids)) => assert_eq!(ids, vec![1, 3]),
            other => panic!("unexpected {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn segment_max_ties_route_to_lowest_index() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::from_rows(&[vec![2.0], vec![2.0], vec![1.0]]).unwrap());
        let y = t.segment_max(x, &[0, 0, 0], 1).unwrap();
        let s = t.sum(y).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_detected_when_verifying() {
        let mut t = Tape::new();
        t.set_verify_finite(true);
        let x = t.leaf(Tensor::scalar(-1.0));
        assert!(matches!(t.log(x), Err(Error::NonFinite { op: "log" })));
    }

    #[test]
    fn inference_tape_records_nothing() {
        let mut t = Tape::inference();
        let x = t.leaf(Tensor::scalar(2.0));
        let y = t.exp(x).unwrap();
        assert!((t.value(y).item() - 2f64.exp()).abs() < 1e-15);
        assert!(!t.is_recording());
    }
}
