//! Recording tape for reverse-mode differentiation over 2-D `f64` arrays.
//!
//! Every value lives in the tape arena and is addressed by a [`Var`]. Ops on
//! a `Var` append a record holding the output and whatever the backward rule
//! needs. [`Tape::backward`] walks the arena once in reverse.

use std::cell::{Ref, RefCell};
use std::rc::Rc;

use rand::Rng;

use super::{AutodiffError, Tensor};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    SparseMatMul(Rc<CsrMatrix>, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Concat(Vec<usize>),
    VStack(Vec<usize>),
    LeakyRelu(usize, f64),
    Dropout(usize, Vec<f64>),
    Sigmoid(usize),
    GatherRows(usize, Rc<Vec<usize>>),
    ScatterSum(usize, Rc<Vec<usize>>),
    ScatterMean(usize, Rc<Vec<usize>>, Vec<f64>),
    /// Source row feeding each output entry, `usize::MAX` for empty groups.
    ScatterMax(usize, Vec<usize>),
    ScaleRows(usize, usize),
    SegmentSoftmax(usize, Rc<Vec<usize>>),
    MaskedSoftmax(usize, Rc<Vec<bool>>),
    Sum(usize),
    Mean(usize),
    Bce(usize, Rc<Vec<f64>>, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::SparseMatMul(..) => "sparse_matmul",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Concat(..) => "concat",
            Op::VStack(..) => "vstack",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Dropout(..) => "dropout",
            Op::Sigmoid(..) => "sigmoid",
            Op::GatherRows(..) => "gather_rows",
            Op::ScatterSum(..) | Op::ScatterMean(..) | Op::ScatterMax(..) => "scatter_reduce",
            Op::ScaleRows(..) => "scale_rows",
            Op::SegmentSoftmax(..) => "segment_softmax",
            Op::MaskedSoftmax(..) => "rowwise_softmax_masked",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Bce(..) => "bce_loss",
        }
    }
}

struct Record {
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    records: RefCell<Vec<Record>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (r, c) = self.dims();
        write!(f, "Var#{}[{r}x{c}]", self.id)
    }
}

/// Gradients produced by [`Tape::backward`], indexed by `Var`.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }
}

fn mismatch(op: &'static str, a: (usize, usize), b: (usize, usize)) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: vec![a.0, a.1],
        right: vec![b.0, b.1],
    }
}

/// `c (m x n) = a (m x k) * b (k x n)`; all buffers row-major unless the
/// `*_t` flag says the operand is stored transposed.
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: slice lengths are checked above and the strides describe them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
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

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, f: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, rows: usize, cols: usize, value: Vec<f64>, requires_grad: bool, op: Op) -> Var<'_> {
        debug_assert_eq!(value.len(), rows * cols, "{}", op.name());
        let mut recs = self.records.borrow_mut();
        recs.push(Record {
            rows,
            cols,
            value,
            requires_grad,
            op,
        });
        Var {
            tape: self,
            id: recs.len() - 1,
        }
    }

    /// Records a tensor as a leaf. It participates in differentiation iff
    /// `t.requires_grad()`.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        let (r, c) = t.dims();
        self.push(r, c, t.data().to_vec(), t.requires_grad(), Op::Leaf)
    }

    /// Non-differentiable input.
    pub fn constant(&self, rows: usize, cols: usize, data: Vec<f64>) -> Var<'_> {
        assert_eq!(data.len(), rows * cols, "constant data length");
        self.push(rows, cols, data, false, Op::Leaf)
    }

    fn info(&self, id: usize) -> (usize, usize, bool) {
        let r = &self.records.borrow()[id];
        (r.rows, r.cols, r.requires_grad)
    }

    /// Reverse sweep from a `1 x 1` loss.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, AutodiffError> {
        assert!(std::ptr::eq(loss.tape, self), "loss recorded on another tape");
        let recs = self.records.borrow();
        let root = &recs[loss.id];
        if root.rows * root.cols != 1 {
            return Err(AutodiffError::NotScalarLoss {
                shape: vec![root.rows, root.cols],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..recs.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let rec = &recs[id];
            if !rec.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&recs, rec, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn backprop(recs: &[Record], rec: &Record, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let wants = |i: usize| recs[i].requires_grad;
    let len = |i: usize| recs[i].value.len();
    match &rec.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (ra, rb) = (&recs[*a], &recs[*b]);
            let (m, k, n) = (ra.rows, ra.cols, rb.cols);
            if wants(*a) {
                // dA = G * B^T
                let slot = &mut grads[*a];
                let beta = if slot.is_some() { 1.0 } else { 0.0 };
                accumulate(slot, m * k, |buf| gemm(m, n, k, g, false, &rb.value, true, buf, beta));
            }
            if wants(*b) {
                // dB = A^T * G
                let slot = &mut grads[*b];
                let beta = if slot.is_some() { 1.0 } else { 0.0 };
                accumulate(slot, k * n, |buf| gemm(k, m, n, &ra.value, true, g, false, buf, beta));
            }
        }
        Op::SparseMatMul(lhs, b) => {
            if wants(*b) {
                let d = lhs.transpose_matmul_dense(g, rec.cols);
                accumulate(&mut grads[*b], d.len(), |buf| buf.iter_mut().zip(&d).for_each(|(o, x)| *o += x));
            }
        }
        Op::Add(a, b) => {
            for i in [*a, *b] {
                if wants(i) {
                    accumulate(&mut grads[i], g.len(), |buf| buf.iter_mut().zip(g).for_each(|(o, x)| *o += x));
                }
            }
        }
        Op::AddRow(a, row) => {
            if wants(*a) {
                accumulate(&mut grads[*a], g.len(), |buf| buf.iter_mut().zip(g).for_each(|(o, x)| *o += x));
            }
            if wants(*row) {
                let c = rec.cols;
                accumulate(&mut grads[*row], c, |buf| {
                    for chunk in g.chunks_exact(c) {
                        buf.iter_mut().zip(chunk).for_each(|(o, x)| *o += x);
                    }
                });
            }
        }
        Op::Concat(parts) => {
            let mut offset = 0;
            for &p in parts {
                let pc = recs[p].cols;
                if wants(p) {
                    accumulate(&mut grads[p], len(p), |buf| {
                        for r in 0..rec.rows {
                            let src = &g[r * rec.cols + offset..r * rec.cols + offset + pc];
                            buf[r * pc..(r + 1) * pc].iter_mut().zip(src).for_each(|(o, x)| *o += x);
                        }
                    });
                }
                offset += pc;
            }
        }
        Op::VStack(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = len(p);
                if wants(p) {
                    let src = &g[offset..offset + n];
                    accumulate(&mut grads[p], n, |buf| buf.iter_mut().zip(src).for_each(|(o, x)| *o += x));
                }
                offset += n;
            }
        }
        Op::LeakyRelu(a, slope) => {
            if wants(*a) {
                let x = &recs[*a].value;
                accumulate(&mut grads[*a], g.len(), |buf| {
                    for ((o, gi), xi) in buf.iter_mut().zip(g).zip(x) {
                        *o += if *xi > 0.0 { *gi } else { slope * gi };
                    }
                });
            }
        }
        Op::Dropout(a, scale) => {
            if wants(*a) {
                accumulate(&mut grads[*a], g.len(), |buf| {
                    for ((o, gi), s) in buf.iter_mut().zip(g).zip(scale) {
                        *o += gi * s;
                    }
                });
            }
        }
        Op::Sigmoid(a) => {
            if wants(*a) {
                accumulate(&mut grads[*a], g.len(), |buf| {
                    for ((o, gi), y) in buf.iter_mut().zip(g).zip(&rec.value) {
                        *o += gi * y * (1.0 - y);
                    }
                });
            }
        }
        Op::GatherRows(a, idx) => {
            if wants(*a) {
                let c = rec.cols;
                accumulate(&mut grads[*a], len(*a), |buf| {
                    for (r, &src) in idx.iter().enumerate() {
                        let dst = &mut buf[src * c..(src + 1) * c];
                        dst.iter_mut().zip(&g[r * c..(r + 1) * c]).for_each(|(o, x)| *o += x);
                    }
                });
            }
        }
        Op::ScatterSum(a, idx) | Op::ScatterMean(a, idx, _) => {
            if wants(*a) {
                let c = rec.cols;
                let counts = match &rec.op {
                    Op::ScatterMean(_, _, counts) => Some(counts),
                    _ => None,
                };
                accumulate(&mut grads[*a], len(*a), |buf| {
                    for (r, &grp) in idx.iter().enumerate() {
                        let w = counts.map_or(1.0, |cnt| 1.0 / cnt[grp]);
                        let src = &g[grp * c..(grp + 1) * c];
                        buf[r * c..(r + 1) * c].iter_mut().zip(src).for_each(|(o, x)| *o += w * x);
                    }
                });
            }
        }
        Op::ScatterMax(a, argmax) => {
            if wants(*a) {
                let c = rec.cols;
                accumulate(&mut grads[*a], len(*a), |buf| {
                    for (pos, &src_row) in argmax.iter().enumerate() {
                        if src_row != usize::MAX {
                            buf[src_row * c + pos % c] += g[pos];
                        }
                    }
                });
            }
        }
        Op::ScaleRows(a, s) => {
            let c = rec.cols;
            if wants(*a) {
                let sv = &recs[*s].value;
                accumulate(&mut grads[*a], g.len(), |buf| {
                    for (r, w) in sv.iter().enumerate() {
                        buf[r * c..(r + 1) * c]
                            .iter_mut()
                            .zip(&g[r * c..(r + 1) * c])
                            .for_each(|(o, x)| *o += w * x);
                    }
                });
            }
            if wants(*s) {
                let av = &recs[*a].value;
                accumulate(&mut grads[*s], rec.rows, |buf| {
                    for (r, o) in buf.iter_mut().enumerate() {
                        *o += av[r * c..(r + 1) * c]
                            .iter()
                            .zip(&g[r * c..(r + 1) * c])
                            .map(|(x, y)| x * y)
                            .sum::<f64>();
                    }
                });
            }
        }
        Op::SegmentSoftmax(a, offsets) => {
            if wants(*a) {
                let y = &rec.value;
                accumulate(&mut grads[*a], g.len(), |buf| {
                    for w in offsets.windows(2) {
                        let span = w[0]..w[1];
                        let dot: f64 = y[span.clone()].iter().zip(&g[span.clone()]).map(|(a, b)| a * b).sum();
                        for e in span {
                            buf[e] += y[e] * (g[e] - dot);
                        }
                    }
                });
            }
        }
        Op::MaskedSoftmax(a, mask) => {
            if wants(*a) {
                let (y, c) = (&rec.value, rec.cols);
                accumulate(&mut grads[*a], g.len(), |buf| {
                    for r in 0..rec.rows {
                        let span = r * c..(r + 1) * c;
                        let dot: f64 = y[span.clone()].iter().zip(&g[span.clone()]).map(|(a, b)| a * b).sum();
                        for e in span {
                            if mask[e] {
                                buf[e] += y[e] * (g[e] - dot);
                            }
                        }
                    }
                });
            }
        }
        Op::Sum(a) => {
            if wants(*a) {
                accumulate(&mut grads[*a], len(*a), |buf| buf.iter_mut().for_each(|o| *o += g[0]));
            }
        }
        Op::Mean(a) => {
            if wants(*a) {
                let n = len(*a) as f64;
                accumulate(&mut grads[*a], len(*a), |buf| buf.iter_mut().for_each(|o| *o += g[0] / n));
            }
        }
        Op::Bce(z, labels, pos_weight) => {
            if wants(*z) {
                let zv = &recs[*z].value;
                let n = zv.len() as f64;
                accumulate(&mut grads[*z], zv.len(), |buf| {
                    for ((o, &x), &y) in buf.iter_mut().zip(zv).zip(labels.iter()) {
                        let s = sigmoid(x);
                        *o += g[0] * (pos_weight * y * (s - 1.0) + (1.0 - y) * s) / n;
                    }
                });
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn dims(&self) -> (usize, usize) {
        let (r, c, _) = self.tape.info(self.id);
        (r, c)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.info(self.id).2
    }

    /// Borrow of the forward value.
    pub fn value(&self) -> Ref<'t, [f64]> {
        Ref::map(self.tape.records.borrow(), |r| r[self.id].value.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.value().to_vec()
    }

    pub fn scalar(&self) -> f64 {
        self.value()[0]
    }

    fn same_tape(&self, other: &Var<'_>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    fn unary(&self, op: Op, f: impl FnOnce(&[f64]) -> Vec<f64>) -> Var<'t> {
        let (r, c, rg) = self.tape.info(self.id);
        let out = f(&self.value());
        self.tape.push(r, c, out, rg, op)
    }

    pub fn matmul(&self, rhs: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.same_tape(&rhs);
        let ((m, k), (k2, n)) = (self.dims(), rhs.dims());
        if k != k2 {
            return Err(mismatch("matmul", (m, k), (k2, n)));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.value(), false, &rhs.value(), false, &mut out, 0.0);
        let rg = self.requires_grad() || rhs.requires_grad();
        Ok(self.tape.push(m, n, out, rg, Op::MatMul(self.id, rhs.id)))
    }

    /// `lhs * self` for a constant sparse `lhs`.
    pub fn sparse_lmul(&self, lhs: Rc<CsrMatrix>) -> Result<Var<'t>, AutodiffError> {
        let (k, n) = self.dims();
        if lhs.cols() != k {
            return Err(mismatch("sparse_matmul", (lhs.rows(), lhs.cols()), (k, n)));
        }
        let out = lhs.matmul_dense(&self.value(), n);
        let m = lhs.rows();
        Ok(self.tape.push(m, n, out, self.requires_grad(), Op::SparseMatMul(lhs, self.id)))
    }

    pub fn add(&self, rhs: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.same_tape(&rhs);
        if self.dims() != rhs.dims() {
            return Err(mismatch("add", self.dims(), rhs.dims()));
        }
        let out = self.value().iter().zip(rhs.value().iter()).map(|(a, b)| a + b).collect();
        let (r, c) = self.dims();
        let rg = self.requires_grad() || rhs.requires_grad();
        Ok(self.tape.push(r, c, out, rg, Op::Add(self.id, rhs.id)))
    }

    /// Adds a `1 x cols` row to every row.
    pub fn add_row(&self, row: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.same_tape(&row);
        let (r, c) = self.dims();
        let (rr, rc) = row.dims();
        if rr * rc != c {
            return Err(mismatch("add_row", (r, c), (rr, rc)));
        }
        let out = {
            let (x, b) = (self.value(), row.value());
            let mut out = x.to_vec();
            for chunk in out.chunks_exact_mut(c.max(1)) {
                chunk.iter_mut().zip(b.iter()).for_each(|(o, v)| *o += v);
            }
            out
        };
        let rg = self.requires_grad() || row.requires_grad();
        Ok(self.tape.push(r, c, out, rg, Op::AddRow(self.id, row.id)))
    }

    /// Column-wise concatenation.
    pub fn concat(parts: &[Var<'t>]) -> Result<Var<'t>, AutodiffError> {
        let first = parts.first().expect("concat of nothing");
        let rows = first.dims().0;
        for p in parts {
            first.same_tape(p);
            if p.dims().0 != rows {
                return Err(mismatch("concat", first.dims(), p.dims()));
            }
        }
        let cols: usize = parts.iter().map(|p| p.dims().1).sum();
        let mut out = vec![0.0; rows * cols];
        let mut offset = 0;
        for p in parts {
            let pc = p.dims().1;
            let v = p.value();
            for r in 0..rows {
                out[r * cols + offset..r * cols + offset + pc].copy_from_slice(&v[r * pc..(r + 1) * pc]);
            }
            offset += pc;
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(first.tape.push(rows, cols, out, rg, Op::Concat(parts.iter().map(|p| p.id).collect())))
    }

    /// Row-wise concatenation.
    pub fn vstack(parts: &[Var<'t>]) -> Result<Var<'t>, AutodiffError> {
        let first = parts.first().expect("vstack of nothing");
        let cols = first.dims().1;
        let mut out = Vec::new();
        let mut rows = 0;
        for p in parts {
            first.same_tape(p);
            if p.dims().1 != cols {
                return Err(mismatch("vstack", first.dims(), p.dims()));
            }
            rows += p.dims().0;
            out.extend_from_slice(&p.value());
        }
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(first.tape.push(rows, cols, out, rg, Op::VStack(parts.iter().map(|p| p.id).collect())))
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t> {
        self.unary(Op::LeakyRelu(self.id, slope), |x| {
            x.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect()
        })
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |x| x.iter().map(|&v| sigmoid(v)).collect())
    }

    /// Inverted dropout. Rate 0 returns `self` unrecorded.
    pub fn dropout<R: Rng + ?Sized>(&self, rate: f64, rng: &mut R) -> Var<'t> {
        assert!((0.0..1.0).contains(&rate), "dropout rate must be in [0, 1)");
        if rate == 0.0 {
            return *self;
        }
        let keep = 1.0 / (1.0 - rate);
        let n = self.value().len();
        let scale: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
        let out = self.value().iter().zip(&scale).map(|(x, s)| x * s).collect();
        let (r, c, rg) = self.tape.info(self.id);
        self.tape.push(r, c, out, rg, Op::Dropout(self.id, scale))
    }

    pub fn gather_rows(&self, indices: Rc<Vec<usize>>) -> Result<Var<'t>, AutodiffError> {
        let (r, c) = self.dims();
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, len: r });
        }
        let out = {
            let v = self.value();
            let mut out = Vec::with_capacity(indices.len() * c);
            for &i in indices.iter() {
                out.extend_from_slice(&v[i * c..(i + 1) * c]);
            }
            out
        };
        Ok(self.tape.push(indices.len(), c, out, self.requires_grad(), Op::GatherRows(self.id, indices)))
    }

    /// Row `r` of `self` is reduced into output row `groups[r]`. Groups with
    /// no members produce zero rows.
    pub fn scatter_reduce(&self, groups: Rc<Vec<usize>>, out_rows: usize, mode: Reduction) -> Result<Var<'t>, AutodiffError> {
        let (r, c) = self.dims();
        if groups.len() != r {
            return Err(mismatch("scatter_reduce", (r, c), (groups.len(), 1)));
        }
        if let Some(&bad) = groups.iter().find(|&&g| g >= out_rows) {
            return Err(AutodiffError::IndexOutOfRange { index: bad, len: out_rows });
        }
        let rg = self.requires_grad();
        let v = self.value();
        let mut out = vec![0.0; out_rows * c];
        match mode {
            Reduction::Sum | Reduction::Mean => {
                for (row, &grp) in groups.iter().enumerate() {
                    let dst = &mut out[grp * c..(grp + 1) * c];
                    dst.iter_mut().zip(&v[row * c..(row + 1) * c]).for_each(|(o, x)| *o += x);
                }
                if mode == Reduction::Sum {
                    drop(v);
                    return Ok(self.tape.push(out_rows, c, out, rg, Op::ScatterSum(self.id, groups)));
                }
                let mut counts = vec![0.0; out_rows];
                groups.iter().for_each(|&g| counts[g] += 1.0);
                for (grp, &n) in counts.iter().enumerate() {
                    if n > 0.0 {
                        out[grp * c..(grp + 1) * c].iter_mut().for_each(|o| *o /= n);
                    }
                }
                drop(v);
                Ok(self.tape.push(out_rows, c, out, rg, Op::ScatterMean(self.id, groups, counts)))
            }
            Reduction::Max => {
                let mut argmax = vec![usize::MAX; out_rows * c];
                for (row, &grp) in groups.iter().enumerate() {
                    for j in 0..c {
                        let pos = grp * c + j;
                        let x = v[row * c + j];
                        if argmax[pos] == usize::MAX || x > out[pos] {
                            out[pos] = x;
                            argmax[pos] = row;
                        }
                    }
                }
                drop(v);
                Ok(self.tape.push(out_rows, c, out, rg, Op::ScatterMax(self.id, argmax)))
            }
        }
    }

    /// Multiplies row `r` by `s[r]`, where `s` is `rows x 1`.
    pub fn scale_rows(&self, s: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.same_tape(&s);
        let (r, c) = self.dims();
        if s.dims() != (r, 1) {
            return Err(mismatch("scale_rows", (r, c), s.dims()));
        }
        let out = {
            let (x, w) = (self.value(), s.value());
            let mut out = x.to_vec();
            for (row, &wi) in w.iter().enumerate() {
                out[row * c..(row + 1) * c].iter_mut().for_each(|o| *o *= wi);
            }
            out
        };
        let rg = self.requires_grad() || s.requires_grad();
        Ok(self.tape.push(r, c, out, rg, Op::ScaleRows(self.id, s.id)))
    }

    /// Softmax over contiguous segments of a column vector;
    /// `offsets[i]..offsets[i + 1]` is segment `i`.
    pub fn segment_softmax(&self, offsets: Rc<Vec<usize>>) -> Result<Var<'t>, AutodiffError> {
        let (r, c) = self.dims();
        if c != 1 || offsets.last() != Some(&r) || offsets.first() != Some(&0) {
            return Err(mismatch("segment_softmax", (r, c), (offsets.len(), 1)));
        }
        let out = {
            let x = self.value();
            let mut out = vec![0.0; r];
            for (seg, w) in offsets.windows(2).enumerate() {
                let span = w[0]..w[1];
                if span.is_empty() {
                    return Err(AutodiffError::EmptySoftmaxRow(seg));
                }
                let max = x[span.clone()].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for e in span.clone() {
                    out[e] = (x[e] - max).exp();
                    total += out[e];
                }
                out[span].iter_mut().for_each(|o| *o /= total);
            }
            out
        };
        Ok(self.tape.push(r, 1, out, self.requires_grad(), Op::SegmentSoftmax(self.id, offsets)))
    }

    /// Row softmax over the entries where `mask` is true; masked entries are
    /// exactly zero.
    pub fn rowwise_softmax_masked(&self, mask: Rc<Vec<bool>>) -> Result<Var<'t>, AutodiffError> {
        let (r, c) = self.dims();
        if mask.len() != r * c {
            return Err(mismatch("rowwise_softmax_masked", (r, c), (mask.len(), 1)));
        }
        let out = {
            let x = self.value();
            let mut out = vec![0.0; r * c];
            for row in 0..r {
                let span = row * c..(row + 1) * c;
                let max = span
                    .clone()
                    .filter(|&e| mask[e])
                    .map(|e| x[e])
                    .fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return Err(AutodiffError::EmptySoftmaxRow(row));
                }
                let mut total = 0.0;
                for e in span.clone().filter(|&e| mask[e]) {
                    out[e] = (x[e] - max).exp();
                    total += out[e];
                }
                out[span].iter_mut().for_each(|o| *o /= total);
            }
            out
        };
        Ok(self.tape.push(r, c, out, self.requires_grad(), Op::MaskedSoftmax(self.id, mask)))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value().iter().sum();
        self.tape.push(1, 1, vec![s], self.requires_grad(), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t> {
        let v = self.value();
        let s = v.iter().sum::<f64>() / v.len() as f64;
        drop(v);
        self.tape.push(1, 1, vec![s], self.requires_grad(), Op::Mean(self.id))
    }

    /// Mean positive-weighted binary cross-entropy on logits:
    /// `-[w y ln σ(z) + (1 - y) ln(1 - σ(z))]`.
    pub fn bce_with_logits(&self, labels: &[f64], pos_weight: f64) -> Result<Var<'t>, AutodiffError> {
        let (r, c) = self.dims();
        if r * c != labels.len() || c != 1 {
            return Err(mismatch("bce_loss", (r, c), (labels.len(), 1)));
        }
        assert!(pos_weight > 0.0, "pos_weight must be positive");
        let loss = {
            let z = self.value();
            let total: f64 = z
                .iter()
                .zip(labels)
                .map(|(&x, &y)| pos_weight * y * softplus(-x) + (1.0 - y) * softplus(x))
                .sum();
            total / labels.len().max(1) as f64
        };
        Ok(self.tape.push(
            1,
            1,
            vec![loss],
            self.requires_grad(),
            Op::Bce(self.id, Rc::new(labels.to_vec()), pos_weight),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn param<'t>(tape: &'t Tape, rows: usize, cols: usize, data: Vec<f64>) -> Var<'t> {
        tape.leaf(&Tensor::matrix(rows, cols, data).trainable())
    }

    #[test]
    fn singleton_masked_softmax_is_one() {
        let tape = Tape::new();
        let x = tape.constant(1, 3, vec![7.0, -2.0, 4.0]);
        let y = x.rowwise_softmax_masked(Rc::new(vec![false, true, false])).unwrap();
        assert_eq!(y.to_vec(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn fully_masked_row_errors() {
        let tape = Tape::new();
        let x = tape.constant(2, 2, vec![1.0; 4]);
        let err = x.rowwise_softmax_masked(Rc::new(vec![true, false, false, false])).unwrap_err();
        assert_eq!(err, AutodiffError::EmptySoftmaxRow(1));
    }

    #[test]
    fn scatter_mean_of_two_rows() {
        let tape = Tape::new();
        let x = tape.constant(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let y = x.scatter_reduce(Rc::new(vec![0, 0]), 1, Reduction::Mean).unwrap();
        assert_eq!(y.to_vec(), vec![2.0, 3.0]);
    }

    #[test]
    fn scatter_max_and_empty_groups() {
        let tape = Tape::new();
        let x = tape.constant(3, 1, vec![1.0, 5.0, -2.0]);
        let y = x.scatter_reduce(Rc::new(vec![0, 0, 2]), 3, Reduction::Max).unwrap();
        assert_eq!(y.to_vec(), vec![5.0, 0.0, -2.0]);
    }

    #[test]
    fn leaky_relu_values() {
        let tape = Tape::new();
        let x = tape.constant(1, 2, vec![-1.0, 2.0]);
        assert_eq!(x.leaky_relu(0.01).to_vec(), vec![-0.01, 2.0]);
    }

    #[test]
    fn linear_grad_is_input() {
        let tape = Tape::new();
        let w = param(&tape, 1, 3, vec![0.5, -1.0, 2.0]);
        let x = tape.constant(3, 1, vec![1.0, 2.0, 3.0]);
        let loss = w.matmul(x).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap(), &[1.0, 2.0, 3.0]);
        assert!(g.get(x).is_none());
    }

    #[test]
    fn leaky_relu_negative_grad_is_slope() {
        let tape = Tape::new();
        let w = param(&tape, 1, 1, vec![-3.0]);
        let loss = w.leaky_relu(0.01).sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap(), &[0.01]);
    }

    #[test]
    fn fan_out_accumulates() {
        let tape = Tape::new();
        let w = param(&tape, 1, 1, vec![2.0]);
        let loss = w.add(w).unwrap().add(w).unwrap().sum();
        assert_eq!(tape.backward(loss).unwrap().get(w).unwrap(), &[3.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let w = param(&tape, 2, 1, vec![1.0, 2.0]);
        assert!(matches!(tape.backward(w), Err(AutodiffError::NotScalarLoss { .. })));
    }

    #[test]
    fn shape_mismatch_reported() {
        let tape = Tape::new();
        let a = tape.constant(2, 3, vec![0.0; 6]);
        let b = tape.constant(2, 3, vec![0.0; 6]);
        assert!(matches!(a.matmul(b), Err(AutodiffError::ShapeMismatch { op: "matmul", .. })));
    }

    #[test]
    fn bce_reference_values() {
        let tape = Tape::new();
        let z = tape.constant(1, 1, vec![0.0]);
        let l = z.bce_with_logits(&[1.0], 1.0).unwrap().scalar();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        let z = tape.constant(1, 1, vec![50.0]);
        let l = z.bce_with_logits(&[1.0], 1.0).unwrap().scalar();
        assert!(l.is_finite() && l < 1e-20);
        let z = tape.constant(1, 1, vec![-800.0]);
        let l = z.bce_with_logits(&[1.0], 1.0).unwrap().scalar();
        assert!((l - 800.0).abs() < 1e-9);
    }

    #[test]
    fn bce_matches_scalar_loop() {
        let logits = [-2.5, 0.3, 1.7, -0.1, 4.0];
        let labels = [1.0, 0.0, 1.0, 1.0, 0.0];
        let w = 3.5;
        let tape = Tape::new();
        let z = tape.constant(5, 1, logits.to_vec());
        let got = z.bce_with_logits(&labels, w).unwrap().scalar();
        let mut want = 0.0;
        for (x, y) in logits.iter().zip(labels) {
            let p: f64 = 1.0 / (1.0 + (-x).exp());
            want -= w * y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        want /= 5.0;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn dropout_rate_zero_is_identity_and_seeded_is_reproducible() {
        let tape = Tape::new();
        let x = tape.constant(4, 4, (0..16).map(f64::from).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = x.dropout(0.0, &mut rng);
        assert_eq!(y.to_vec(), x.to_vec());
        let a = x.dropout(0.5, &mut ChaCha8Rng::seed_from_u64(9)).to_vec();
        let b = x.dropout(0.5, &mut ChaCha8Rng::seed_from_u64(9)).to_vec();
        assert_eq!(a, b);
        assert!(a.iter().zip(x.to_vec()).all(|(o, i)| *o == 0.0 || *o == 2.0 * i));
    }

    #[test]
    fn sparse_matmul_matches_dense() {
        let tape = Tape::new();
        let s = Rc::new(CsrMatrix::from_rows(3, vec![vec![(0, 2.0), (2, -1.0)], vec![]]));
        let w = param(&tape, 3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = w.sparse_lmul(s.clone()).unwrap();
        assert_eq!(y.to_vec(), vec![-3.0, -2.0, 0.0, 0.0]);
        let d = tape.constant(2, 3, s.to_dense());
        let y2 = d.matmul(w).unwrap();
        assert_eq!(y.to_vec(), y2.to_vec());
        let l1 = y.sum();
        let g1 = tape.backward(l1).unwrap().get(w).unwrap().to_vec();
        let g2 = tape.backward(y2.sum()).unwrap().get(w).unwrap().to_vec();
        assert_eq!(g1, g2);
    }
}
