//! Reverse-mode autodiff over whole matrices.
//!
//! Every op appends one node, so node order is already a topological order and
//! the backward pass is a single reverse sweep.

use super::linalg::{tri_solve_unit_lower, tri_solve_unit_lower_transposed};
use super::matrix::{dot, Matrix};
use super::softmax::{softmax_in_place, Mask};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Elementwise similarity applied to precomputed scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElemKernel<T> {
    Identity,
    Exp {
        inv_tau: T,
    },
    Relu,
    Solu {
        inv_tau: T,
    },
    /// Forward rounds to `decimals` places; backward passes the gradient through unchanged.
    RoundSte {
        decimals: i32,
    },
}

impl<T: Scalar> ElemKernel<T> {
    #[inline]
    pub fn forward(self, x: T) -> T {
        match self {
            ElemKernel::Identity => x,
            ElemKernel::Exp { inv_tau } => (x * inv_tau).exp(),
            ElemKernel::Relu => x.max(T::zero()),
            ElemKernel::Solu { inv_tau } => x * (x * inv_tau).exp(),
            ElemKernel::RoundSte { decimals } => round_to(x, decimals),
        }
    }

    #[inline]
    fn derivative(self, x: T, y: T) -> T {
        match self {
            ElemKernel::Identity | ElemKernel::RoundSte { .. } => T::one(),
            ElemKernel::Exp { inv_tau } => inv_tau * y,
            ElemKernel::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            ElemKernel::Solu { inv_tau } => (x * inv_tau).exp() * (T::one() + x * inv_tau),
        }
    }
}

/// Round half away from zero to `decimals` places.
#[inline]
pub fn round_to<T: Scalar>(x: T, decimals: i32) -> T {
    let p = T::lit(10f64.powi(decimals));
    (x * p).round() / p
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Scores(Var, Var, T, Mask),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    ScaleBy(Var, Var),
    Softmax(Var, Mask),
    Kernel(Var, ElemKernel<T>, Mask),
    MaskedFill(Var, Mask),
    TriSolve(Var, Var),
    Gather(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    RmsNorm(Var, T),
    Rope(Var, usize, T),
    Sum(Var),
    CrossEntropy(Var, Vec<usize>),
}

struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Matrix<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::DimMismatch { op, left: a, right: b }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input.
    pub fn param(&mut self, m: Matrix<T>) -> Var {
        self.nodes.push(Node {
            value: m,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, m: Matrix<T>) -> Var {
        self.nodes.push(Node {
            value: m,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_bt(self.value(b))?;
        Ok(self.push(out, Op::MatMulBt(a, b), &[a, b]))
    }

    /// `c · a bᵀ` on the entries kept by `mask`, zero elsewhere. Only kept
    /// entries are computed.
    pub fn scores(&mut self, a: Var, b: Var, c: T, mask: Mask) -> Result<Var> {
        let (am, bm) = (self.value(a), self.value(b));
        if am.cols() != bm.cols() {
            return Err(mismatch("scores", am.shape(), bm.shape()));
        }
        let mut out = Matrix::zeros(am.rows(), bm.rows());
        for i in 0..am.rows() {
            let ar = am.row(i);
            let span = mask.span(i, bm.rows());
            for (j, o) in out.row_mut(i)[..span].iter_mut().enumerate() {
                *o = c * dot(ar, bm.row(j));
            }
        }
        Ok(self.push(out, Op::Scores(a, b, c, mask), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds a `1 × c` row to every row of `a` (bias).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (am, rm) = (self.value(a), self.value(row));
        if rm.rows() != 1 || rm.cols() != am.cols() {
            return Err(mismatch("add_row", am.shape(), rm.shape()));
        }
        let out = Matrix::from_fn(am.rows(), am.cols(), |i, j| am.get(i, j) + rm.get(0, j));
        Ok(self.push(out, Op::AddRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    /// Multiplies `a` by the 1×1 node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let sm = self.value(s);
        if sm.shape() != (1, 1) {
            return Err(Error::NonScalar(sm.rows(), sm.cols()));
        }
        let c = sm.get(0, 0);
        let out = self.value(a).scale(c);
        Ok(self.push(out, Op::ScaleBy(a, s), &[a, s]))
    }

    /// Row softmax over the unmasked entries. Unlike the standalone
    /// `row_softmax`, a row with no unmasked entry yields zeros here, which is
    /// what a strictly-past normaliser needs at position 0.
    pub fn softmax(&mut self, a: Var, mask: Mask) -> Var {
        let am = self.value(a);
        let mut out = Matrix::zeros(am.rows(), am.cols());
        for i in 0..am.rows() {
            let span = mask.span(i, am.cols());
            if span == 0 {
                continue;
            }
            let row = out.row_mut(i);
            row[..span].copy_from_slice(&am.row(i)[..span]);
            softmax_in_place(&mut row[..span]);
        }
        self.push(out, Op::Softmax(a, mask), &[a])
    }

    /// Elementwise kernel on kept entries; masked entries are filled with 0.
    pub fn kernel(&mut self, a: Var, k: ElemKernel<T>, mask: Mask) -> Var {
        let am = self.value(a);
        let mut out = Matrix::zeros(am.rows(), am.cols());
        for i in 0..am.rows() {
            let span = mask.span(i, am.cols());
            for (o, &x) in out.row_mut(i)[..span].iter_mut().zip(am.row(i)) {
                *o = k.forward(x);
            }
        }
        self.push(out, Op::Kernel(a, k, mask), &[a])
    }

    /// Zeroes every entry outside `mask`.
    pub fn masked_fill(&mut self, a: Var, mask: Mask) -> Var {
        let am = self.value(a);
        let out = Matrix::from_fn(am.rows(), am.cols(), |i, j| {
            if mask.keeps(i, j) {
                am.get(i, j)
            } else {
                T::zero()
            }
        });
        self.push(out, Op::MaskedFill(a, mask), &[a])
    }

    /// `(I + strict_lower(a))⁻¹ b`.
    pub fn tri_solve(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tri_solve_unit_lower(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::TriSolve(a, b), &[a, b]))
    }

    /// Rows `ids` of `table` (embedding lookup).
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(mismatch("gather", t.shape(), (bad, 0)));
        }
        let mut data = Vec::with_capacity(ids.len() * t.cols());
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let out = Matrix::from_raw(ids.len(), t.cols(), data);
        Ok(self.push(out, Op::Gather(table, ids.to_vec()), &[table]))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let am = self.value(a);
        if start + len > am.cols() {
            return Err(mismatch("slice_cols", am.shape(), (start, len)));
        }
        let out = am.slice_cols(start, start + len);
        Ok(self.push(out, Op::SliceCols(a, start), &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Matrix::hstack(&mats)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Each row divided by its root-mean-square (no gain).
    pub fn rms_norm(&mut self, a: Var, eps: T) -> Var {
        let am = self.value(a);
        let n = T::lit(am.cols() as f64);
        let mut out = am.clone();
        for i in 0..am.rows() {
            let r = (dot(am.row(i), am.row(i)) / n + eps).sqrt();
            for x in out.row_mut(i) {
                *x /= r;
            }
        }
        self.push(out, Op::RmsNorm(a, eps), &[a])
    }

    /// Rotary embedding: row `t` is position `t`; each block of `head_dim`
    /// columns is rotated pairwise `(i, i + head_dim/2)` by `t·base^(−2i/head_dim)`.
    pub fn rope(&mut self, a: Var, head_dim: usize, base: T) -> Result<Var> {
        let am = self.value(a);
        if head_dim == 0 || !head_dim.is_multiple_of(2) || !am.cols().is_multiple_of(head_dim) {
            return Err(Error::InvalidConfig(format!(
                "rope needs an even head_dim dividing {}, got {head_dim}",
                am.cols()
            )));
        }
        let out = rope_apply(am, head_dim, base, false);
        Ok(self.push(out, Op::Rope(a, head_dim, base), &[a]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// Mean cross-entropy of row-wise logits against `labels` (one per row).
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lm = self.value(logits);
        if labels.len() != lm.rows() || labels.iter().any(|&l| l >= lm.cols()) {
            return Err(mismatch("cross_entropy", lm.shape(), (labels.len(), 1)));
        }
        let mut total = T::zero();
        for (i, &l) in labels.iter().enumerate() {
            let row = lm.row(i);
            total += super::softmax::logsumexp(row) - row[l];
        }
        let out = Matrix::scalar(total / T::lit(labels.len().max(1) as f64));
        Ok(self.push(out, Op::CrossEntropy(logits, labels.to_vec()), &[logits]))
    }

    /// Adjoints of the 1×1 node `out` with respect to every upstream node.
    pub fn backward(&self, out: Var) -> Result<Gradients<T>> {
        let (r, c) = self.shape(out);
        if (r, c) != (1, 1) {
            return Err(Error::NonScalar(r, c));
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(Matrix::scalar(T::one()));
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads)?;
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Matrix<T>, grads: &mut [Option<Matrix<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if self.wants(a) {
                    self.accumulate(grads, a, g.matmul_bt(self.value(b))?);
                }
                if self.wants(b) {
                    self.accumulate(grads, b, self.value(a).matmul_at(g)?);
                }
            }
            &Op::MatMulBt(a, b) => {
                if self.wants(a) {
                    self.accumulate(grads, a, g.matmul(self.value(b))?);
                }
                if self.wants(b) {
                    self.accumulate(grads, b, g.matmul_at(self.value(a))?);
                }
            }
            &Op::Scores(a, b, c, mask) => {
                let (am, bm) = (self.value(a), self.value(b));
                let d = am.cols();
                let mut ga = Matrix::zeros(am.rows(), d);
                let mut gb = Matrix::zeros(bm.rows(), d);
                for i in 0..g.rows() {
                    let span = mask.span(i, g.cols());
                    let gr = &g.row(i)[..span];
                    let ar = am.row(i);
                    for (j, &gv) in gr.iter().enumerate() {
                        if gv == T::zero() {
                            continue;
                        }
                        let w = c * gv;
                        let br = bm.row(j);
                        for (o, &x) in ga.row_mut(i).iter_mut().zip(br) {
                            *o += w * x;
                        }
                        for (o, &x) in gb.row_mut(j).iter_mut().zip(ar) {
                            *o += w * x;
                        }
                    }
                }
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            &Op::Transpose(a) => self.accumulate(grads, a, g.transpose()),
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.scale(-T::one()));
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    self.accumulate(grads, a, g.hadamard(self.value(b))?);
                }
                if self.wants(b) {
                    self.accumulate(grads, b, g.hadamard(self.value(a))?);
                }
            }
            &Op::AddRow(a, row) => {
                self.accumulate(grads, a, g.clone());
                if self.wants(row) {
                    let sums = Matrix::from_fn(1, g.cols(), |_, j| (0..g.rows()).map(|i| g.get(i, j)).sum());
                    self.accumulate(grads, row, sums);
                }
            }
            &Op::Scale(a, c) => self.accumulate(grads, a, g.scale(c)),
            &Op::ScaleBy(a, s) => {
                let c = self.value(s).get(0, 0);
                if self.wants(a) {
                    self.accumulate(grads, a, g.scale(c));
                }
                if self.wants(s) {
                    let gs = dot(g.data(), self.value(a).data());
                    self.accumulate(grads, s, Matrix::scalar(gs));
                }
            }
            &Op::Softmax(a, mask) => {
                let y = &node.value;
                let mut ga = Matrix::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let span = mask.span(i, y.cols());
                    let (yr, gr) = (&y.row(i)[..span], &g.row(i)[..span]);
                    let inner = dot(yr, gr);
                    for (o, (&yv, &gv)) in ga.row_mut(i)[..span].iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yv * (gv - inner);
                    }
                }
                self.accumulate(grads, a, ga);
            }
            &Op::Kernel(a, k, mask) => {
                let (x, y) = (self.value(a), &node.value);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let span = mask.span(i, x.cols());
                    let rows = x.row(i).iter().zip(y.row(i)).zip(g.row(i));
                    for (o, ((&xv, &yv), &gv)) in ga.row_mut(i)[..span].iter_mut().zip(rows) {
                        *o = gv * k.derivative(xv, yv);
                    }
                }
                self.accumulate(grads, a, ga);
            }
            &Op::MaskedFill(a, mask) => {
                let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| {
                    if mask.keeps(i, j) {
                        g.get(i, j)
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, a, ga);
            }
            &Op::TriSolve(a, b) => {
                let am = self.value(a);
                let gb = tri_solve_unit_lower_transposed(am, g)?;
                if self.wants(a) {
                    let full = gb.matmul_bt(&node.value)?;
                    let ga = Matrix::from_fn(
                        am.rows(),
                        am.cols(),
                        |i, j| if j < i { -full.get(i, j) } else { T::zero() },
                    );
                    self.accumulate(grads, a, ga);
                }
                self.accumulate(grads, b, gb);
            }
            Op::Gather(table, ids) => {
                let t = self.value(*table);
                let mut gt = Matrix::zeros(t.rows(), t.cols());
                for (r, &i) in ids.iter().enumerate() {
                    for (o, &v) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            &Op::SliceCols(a, start) => {
                let am = self.value(a);
                let ga = Matrix::from_fn(am.rows(), am.cols(), |i, j| {
                    if j >= start && j < start + g.cols() {
                        g.get(i, j - start)
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.wants(p) {
                        self.accumulate(grads, p, g.slice_cols(off, off + w));
                    }
                    off += w;
                }
            }
            &Op::RmsNorm(a, eps) => {
                let x = self.value(a);
                let y = &node.value;
                let n = T::lit(x.cols() as f64);
                let mut ga = Matrix::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let r = (dot(x.row(i), x.row(i)) / n + eps).sqrt();
                    let m = dot(g.row(i), y.row(i)) / n;
                    for (o, (&gv, &yv)) in ga.row_mut(i).iter_mut().zip(g.row(i).iter().zip(y.row(i))) {
                        *o = (gv - yv * m) / r;
                    }
                }
                self.accumulate(grads, a, ga);
            }
            &Op::Rope(a, head_dim, base) => {
                self.accumulate(grads, a, rope_apply(g, head_dim, base, true));
            }
            &Op::Sum(a) => {
                let am = self.value(a);
                self.accumulate(grads, a, Matrix::filled(am.rows(), am.cols(), g.get(0, 0)));
            }
            Op::CrossEntropy(logits, labels) => {
                let lm = self.value(*logits);
                let scale = g.get(0, 0) / T::lit(labels.len().max(1) as f64);
                let mut gl = lm.clone();
                for (i, &l) in labels.iter().enumerate() {
                    let row = gl.row_mut(i);
                    softmax_in_place(row);
                    row[l] -= T::one();
                    for x in row.iter_mut() {
                        *x *= scale;
                    }
                }
                self.accumulate(grads, *logits, gl);
            }
        }
        Ok(())
    }
}

fn rope_apply<T: Scalar>(m: &Matrix<T>, head_dim: usize, base: T, inverse: bool) -> Matrix<T> {
    let half = head_dim / 2;
    let mut out = m.clone();
    let freqs: Vec<T> = (0..half)
        .map(|i| base.powf(-T::lit((2 * i) as f64) / T::lit(head_dim as f64)))
        .collect();
    for t in 0..m.rows() {
        let pos = T::lit(t as f64);
        let src = m.row(t);
        let dst = out.row_mut(t);
        for h in (0..m.cols()).step_by(head_dim) {
            for (i, &f) in freqs.iter().enumerate() {
                let (s, c) = (pos * f).sin_cos();
                let s = if inverse { -s } else { s };
                let (x0, x1) = (src[h + i], src[h + i + half]);
                dst[h + i] = x0 * c - x1 * s;
                dst[h + i + half] = x0 * s + x1 * c;
            }
        }
    }
    out
}

/// Compares tape adjoints of `f` at `x` against central finite differences.
/// Returns `max |g_ad − g_fd| / (|g_ad| + |g_fd| + 1e-12)` over entries of `x`.
pub fn grad_check<T, F>(f: F, x: &Matrix<T>, eps: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::InvalidConfig(format!(
            "grad_check eps {eps} outside [1e-7, 1e-4]"
        )));
    }
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let out = f(&mut tape, xv)?;
    let grads = tape.backward(out)?;
    let zero = Matrix::zeros(x.rows(), x.cols());
    let g_ad = grads.get(xv).unwrap_or(&zero);

    let eval = |m: Matrix<T>| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.param(m);
        let o = f(&mut t, v)?;
        Ok(t.value(o).get(0, 0).as_f64())
    };
    let mut worst = 0.0f64;
    for idx in 0..x.data().len() {
        let mut plus = x.clone();
        plus.data_mut()[idx] += T::lit(eps);
        let mut minus = x.clone();
        minus.data_mut()[idx] -= T::lit(eps);
        let fd = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let ad = g_ad.data()[idx].as_f64();
        worst = worst.max((ad - fd).abs() / (ad.abs() + fd.abs() + 1e-12));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;

    #[test]
    fn sum_gradient_is_ones() {
        let x = Matrix::from_fn(3, 2, |i, j| (i as f64) - (j as f64));
        // a power-of-two step keeps the differences exact
        let err = grad_check(|t, v| Ok(t.sum(v)), &x, 2f64.powi(-20)).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn half_square_norm_gradient_is_x() {
        let x = Rng::new(1).gaussian_matrix::<f64>(3, 4, 1.0);
        let f = |t: &mut Tape<f64>, v: Var| {
            let sq = t.mul(v, v)?;
            let s = t.sum(sq);
            Ok(t.scale(s, 0.5))
        };
        let mut tape = Tape::new();
        let v = tape.param(x.clone());
        let out = f(&mut tape, v).unwrap();
        let g = tape.backward(out).unwrap();
        assert!(g.get(v).unwrap().max_abs_diff(&x).unwrap() < 1e-15);
        assert!(grad_check(f, &x, 1e-6).unwrap() < 1e-6);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let x = Matrix::<f64>::zeros(2, 2);
        assert!(matches!(
            grad_check(|_, v| Ok(v), &x, 1e-6),
            Err(Error::NonScalar(2, 2))
        ));
        assert!(grad_check(|t, v| Ok(t.sum(v)), &x, 1e-2).is_err());
    }

    fn weighted_sum(t: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
        let (r, c) = t.value(v).shape();
        let w = t.constant(Rng::new(seed).gaussian_matrix(r, c, 1.0));
        let p = t.mul(v, w)?;
        Ok(t.sum(p))
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let mut rng = Rng::new(9);
        let x = rng.gaussian_matrix::<f64>(5, 5, 0.5);
        let other = rng.gaussian_matrix::<f64>(5, 5, 0.5);
        let row = rng.gaussian_matrix::<f64>(1, 5, 0.5);
        let table = rng.gaussian_matrix::<f64>(7, 5, 0.5);
        type Build = Box<dyn Fn(&mut Tape<f64>, Var) -> Result<Var>>;
        let o1 = other.clone();
        let o1b = other.clone();
        let o2 = other.clone();
        let o3 = other.clone();
        let o4 = other.clone();
        let r1 = row.clone();
        let t1 = table.clone();
        let cases: Vec<(&str, Build)> = vec![
            (
                "matmul",
                Box::new(move |t, v| {
                    let b = t.constant(o1.clone());
                    t.matmul(v, b)
                }),
            ),
            (
                "matmul_bt",
                Box::new(move |t, v| {
                    let b = t.constant(o2.clone());
                    let m = t.matmul_bt(b, v)?;
                    t.matmul_bt(m, v)
                }),
            ),
            ("transpose", Box::new(|t, v| Ok(t.transpose(v)))),
            (
                "scores_strict",
                Box::new(move |t, v| {
                    let b = t.constant(o1b.clone());
                    let s = t.scores(v, b, 0.7, Mask::CausalStrict)?;
                    t.scores(s, v, 1.3, Mask::None)
                }),
            ),
            (
                "scores_inclusive",
                Box::new(|t, v| t.scores(v, v, 0.5, Mask::CausalInclusive)),
            ),
            (
                "sub_mul",
                Box::new(move |t, v| {
                    let b = t.constant(o3.clone());
                    let d = t.sub(b, v)?;
                    t.mul(d, v)
                }),
            ),
            (
                "add_row",
                Box::new(move |t, v| {
                    let r = t.constant(r1.clone());
                    let a = t.add_row(v, r)?;
                    let s = t.slice_cols(v, 0, 1)?;
                    let s = t.transpose(s);
                    t.add_row(a, s)
                }),
            ),
            (
                "scale_by",
                Box::new(|t, v| {
                    let s = t.slice_cols(v, 2, 1)?;
                    let s = t.slice_cols(s, 0, 1)?;
                    let s = t.sum(s);
                    t.scale_by(v, s)
                }),
            ),
            (
                "softmax_inclusive",
                Box::new(|t, v| Ok(t.softmax(v, Mask::CausalInclusive))),
            ),
            ("softmax_strict", Box::new(|t, v| Ok(t.softmax(v, Mask::CausalStrict)))),
            (
                "kernel_exp",
                Box::new(|t, v| Ok(t.kernel(v, ElemKernel::Exp { inv_tau: 0.7 }, Mask::CausalStrict))),
            ),
            (
                "kernel_solu",
                Box::new(|t, v| Ok(t.kernel(v, ElemKernel::Solu { inv_tau: 0.5 }, Mask::None))),
            ),
            (
                "masked_fill",
                Box::new(|t, v| Ok(t.masked_fill(v, Mask::CausalInclusive))),
            ),
            (
                "tri_solve",
                Box::new(move |t, v| {
                    let b = t.constant(o4.clone());
                    let a = t.scale(v, 0.5);
                    let x = t.tri_solve(a, v)?;
                    t.tri_solve(x, b)
                }),
            ),
            (
                "gather",
                Box::new(move |t, v| {
                    let tb = t.constant(t1.clone());
                    let g = t.gather(v, &[0, 3, 3, 1])?;
                    let h = t.gather(tb, &[1, 2])?;
                    let gh = t.matmul_bt(g, h)?;
                    Ok(gh)
                }),
            ),
            (
                "concat",
                Box::new(|t, v| {
                    let a = t.slice_cols(v, 0, 2)?;
                    let b = t.slice_cols(v, 2, 3)?;
                    let c = t.concat_cols(&[b, a, b])?;
                    t.matmul_bt(c, c)
                }),
            ),
            ("rms_norm", Box::new(|t, v| Ok(t.rms_norm(v, 1e-6)))),
            (
                "rope",
                Box::new(|t, v| {
                    let a = t.slice_cols(v, 0, 4)?;
                    t.rope(a, 2, 10.0)
                }),
            ),
            ("cross_entropy", Box::new(|t, v| t.cross_entropy(v, &[0, 4, 2, 2, 1]))),
        ];
        for (seed, (name, build)) in cases.into_iter().enumerate() {
            let f = |t: &mut Tape<f64>, v: Var| {
                let y = build(t, v)?;
                if t.value(y).shape() == (1, 1) {
                    Ok(y)
                } else {
                    weighted_sum(t, y, seed as u64)
                }
            };
            let err = grad_check(f, &x, 1e-5).unwrap();
            assert!(err < 1e-4, "{name}: {err}");
        }
    }

    #[test]
    fn round_ste_passes_gradient_through() {
        let x = Matrix::from_rows(&[vec![0.123, -0.456]]).unwrap();
        let mut tape = Tape::new();
        let v = tape.param(x);
        let y = tape.kernel(v, ElemKernel::RoundSte { decimals: 1 }, Mask::None);
        assert_eq!(tape.value(y).data(), &[0.1, -0.5]);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(v).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn rope_preserves_norm_and_inverts() {
        let x = Rng::new(4).gaussian_matrix::<f64>(6, 8, 1.0);
        let y = rope_apply(&x, 4, 10000.0, false);
        for i in 0..6 {
            assert!((dot(x.row(i), x.row(i)) - dot(y.row(i), y.row(i))).abs() < 1e-12);
        }
        assert!(rope_apply(&y, 4, 10000.0, true).max_abs_diff(&x).unwrap() < 1e-12);
        assert_eq!(y.row(0), x.row(0));
    }
}
