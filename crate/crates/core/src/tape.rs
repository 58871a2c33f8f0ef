//! Reverse-mode differentiation over a linear tape.
//!
//! Each forward op appends a node holding its output and the parents it
//! read. Because nodes are only ever appended, the tape is already in
//! topological order and `backward` simply walks it in reverse.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var },
    MatMulNT { a: Var, b: Var },
    Transpose { x: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddRow { x: Var, bias: Var },
    Scale { x: Var, factor: T },
    Gelu { x: Var },
    SoftmaxRows { x: Var },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Sum { x: Var },
    Mean { x: Var },
    MeanRows { x: Var },
    MaxRows { x: Var, argmax: Vec<usize> },
    ConcatRows { parts: Vec<Var> },
    ConcatCols { parts: Vec<Var> },
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    GatherRows { table: Var, index: Vec<usize> },
    BceWithLogits { logits: Var, targets: Vec<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation. One tape per forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn check_finite<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn require_2d<T: Scalar>(t: &Tensor<T>, op: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        ref s => Err(Error::dim(format!("{op} expects a 2-D tensor, got shape {s:?}"))),
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, contribution: Vec<T>) {
    match slot {
        Some(g) => g.iter_mut().zip(contribution).for_each(|(a, b)| *a = *a + b),
        None => *slot = Some(contribution),
    }
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

    /// Records a leaf. Gradients are kept only when `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let needs_grad = tensor.requires_grad();
        self.push(tensor, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        let t = tensor.with_requires_grad(false);
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Gradient populated by the last [`Tape::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var], name: &'static str) -> Result<Var> {
        check_finite(&value, name)?;
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        Ok(self.push(value, op, needs_grad))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = require_2d(self.value(a), "matmul")?;
        let (k2, n) = require_2d(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::dim(format!("matmul inner dimensions {m}x{k} · {k2}x{n}")));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            n as isize,
            1,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        self.record(Tensor::new(&[m, n], out)?, Op::MatMul { a, b }, &[a, b], "matmul")
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = require_2d(self.value(a), "matmul_nt")?;
        let (n, k2) = require_2d(self.value(b), "matmul_nt")?;
        if k != k2 {
            return Err(Error::dim(format!("matmul_nt inner dimensions {m}x{k} · ({n}x{k2})ᵀ")));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            k as isize,
            1,
            self.value(b).data(),
            1,
            k as isize,
            T::zero(),
            &mut out,
            n as isize,
            1,
        );
        self.record(Tensor::new(&[m, n], out)?, Op::MatMulNT { a, b }, &[a, b], "matmul_nt")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = require_2d(self.value(x), "transpose")?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.record(Tensor::new(&[c, r], out)?, Op::Transpose { x }, &[x], "transpose")
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(self.shape(a), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y)?;
        self.record(out, Op::Add { a, b }, &[a, b], "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y)?;
        self.record(out, Op::Sub { a, b }, &[a, b], "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y)?;
        self.record(out, Op::Mul { a, b }, &[a, b], "mul")
    }

    /// Adds a length-n vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        if self.value(bias).numel() != cols {
            return Err(Error::dim(format!(
                "add_row: bias of {} values for rows of width {cols}",
                self.value(bias).numel()
            )));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(cols) {
            row.iter_mut().zip(b).for_each(|(o, &bv)| *o = *o + bv);
        }
        let t = Tensor::new(self.shape(x), out)?;
        self.record(t, Op::AddRow { x, bias }, &[x, bias], "add_row")
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var> {
        let data = self.value(x).data().iter().map(|&v| v * factor).collect();
        let t = Tensor::new(self.shape(x), data)?;
        self.record(t, Op::Scale { x, factor }, &[x], "scale")
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let half = T::from_f64_lossy(0.5);
        let inv_sqrt2 = T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2);
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v * half * (T::one() + (v * inv_sqrt2).erf()))
            .collect();
        let t = Tensor::new(self.shape(x), data)?;
        self.record(t, Op::Gelu { x }, &[x], "gelu")
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let cols = self.value(x).cols();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(cols) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total = total + *v;
            }
            row.iter_mut().for_each(|v| *v = *v / total);
        }
        let t = Tensor::new(self.shape(x), out)?;
        self.record(t, Op::SoftmaxRows { x }, &[x], "softmax_rows")
    }

    /// Normalizes each row over the last axis, then applies `gamma`/`beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        if eps < T::zero() {
            return Err(Error::config("layer_norm eps must be non-negative"));
        }
        let d = self.value(x).cols();
        if self.value(gamma).numel() != d || self.value(beta).numel() != d {
            return Err(Error::dim(format!(
                "layer_norm: affine params of {} and {} values for width {d}",
                self.value(gamma).numel(),
                self.value(beta).numel()
            )));
        }
        let n = T::from_usize(d).expect("width fits in scalar");
        let gm = self.value(gamma).data();
        let bt = self.value(beta).data();
        let src = self.value(x).data();
        let rows = src.len() / d;
        let mut xhat = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); src.len()];
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * gm[j] + bt[j];
            }
        }
        let t = Tensor::new(self.shape(x), out)?;
        self.record(t, Op::LayerNorm { x, gamma, beta, xhat, rstd }, &[x, gamma, beta], "layer_norm")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.record(Tensor::scalar(s), Op::Sum { x }, &[x], "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>() / T::from_usize(t.numel()).expect("count fits");
        self.record(Tensor::scalar(s), Op::Mean { x }, &[x], "mean")
    }

    /// Column-wise mean of a matrix, as a 1×n row. Each column is summed
    /// in ascending order, so the result does not depend on row order.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        let src = t.data();
        let n = T::from_usize(rows).expect("count fits");
        let mut column = Vec::with_capacity(rows);
        let out: Vec<T> = (0..cols)
            .map(|j| {
                column.clear();
                column.extend((0..rows).map(|r| src[r * cols + j]));
                column.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                column.iter().fold(T::zero(), |acc, &v| acc + v) / n
            })
            .collect();
        self.record(Tensor::new(&[1, cols], out)?, Op::MeanRows { x }, &[x], "mean_rows")
    }

    /// Column-wise max of a matrix, as a 1×n row. Ties route the gradient
    /// to the first maximal row.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        let src = t.data();
        let mut out = src[..cols].to_vec();
        let mut argmax = vec![0usize; cols];
        for r in 1..rows {
            for j in 0..cols {
                let v = src[r * cols + j];
                if v > out[j] {
                    out[j] = v;
                    argmax[j] = r;
                }
            }
        }
        self.record(Tensor::new(&[1, cols], out)?, Op::MaxRows { x, argmax }, &[x], "max_rows")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(Error::dim(format!("concat_rows: widths {cols} and {}", t.cols())));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let t = Tensor::new(&[rows, cols], data)?;
        self.record(t, Op::ConcatRows { parts: parts.to_vec() }, parts, "concat_rows")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::contract("concat_cols of nothing"))?;
        let rows = self.value(first).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        if let Some(&bad) = parts.iter().find(|&&p| self.value(p).rows() != rows) {
            return Err(Error::dim(format!(
                "concat_cols: row counts {rows} and {}",
                self.value(bad).rows()
            )));
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let t = Tensor::new(&[rows, total], data)?;
        self.record(t, Op::ConcatCols { parts: parts.to_vec() }, parts, "concat_cols")
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        if len == 0 || start + len > rows {
            return Err(Error::dim(format!("slice_rows {start}..{} of {rows}", start + len)));
        }
        let data = t.data()[start * cols..(start + len) * cols].to_vec();
        let t = Tensor::new(&[len, cols], data)?;
        self.record(t, Op::SliceRows { x, start }, &[x], "slice_rows")
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        if len == 0 || start + len > cols {
            return Err(Error::dim(format!("slice_cols {start}..{} of {cols}", start + len)));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&t.data()[r * cols + start..r * cols + start + len]);
        }
        let t = Tensor::new(&[rows, len], data)?;
        self.record(t, Op::SliceCols { x, start }, &[x], "slice_cols")
    }

    /// Row lookup into a table (embedding gather).
    pub fn gather_rows(&mut self, table: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (rows, cols) = (t.rows(), t.cols());
        if index.is_empty() {
            return Err(Error::contract("gather_rows with no indices"));
        }
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            if i >= rows {
                return Err(Error::config(format!("row index {i} outside table of {rows} rows")));
            }
            data.extend_from_slice(&t.data()[i * cols..(i + 1) * cols]);
        }
        let t = Tensor::new(&[index.len(), cols], data)?;
        self.record(t, Op::GatherRows { table, index: index.to_vec() }, &[table], "gather_rows")
    }

    /// Mean binary cross-entropy on logits, in the overflow-free form
    /// `max(z,0) − z·t + log(1 + e^{−|z|})`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let z = self.value(logits).data();
        if z.len() != targets.len() {
            return Err(Error::dim(format!("bce: {} logits, {} targets", z.len(), targets.len())));
        }
        if targets.iter().any(|&t| t != T::zero() && t != T::one()) {
            return Err(Error::validation("bce targets must be 0 or 1"));
        }
        let total: T = z
            .iter()
            .zip(targets)
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let loss = total / T::from_usize(z.len()).expect("count fits");
        let op = Op::BceWithLogits { logits, targets: targets.to_vec() };
        self.record(Tensor::scalar(loss), op, &[logits], "bce_with_logits")
    }

    /// Replays the tape in reverse from a scalar `loss`, storing gradients
    /// on every node that depends on a `requires_grad` leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward from non-scalar of shape {:?}",
                self.shape(loss)
            )));
        }
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            self.nodes[i].value.set_grad(g)?;
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out_cols = node.value.cols();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    // g (m×n) · bᵀ (n×k)
                    let bd = self.value(*b).data();
                    T::gemm(m, n, k, T::one(), g, n as isize, 1, bd, 1, n as isize, T::zero(), &mut da, k as isize, 1);
                    accumulate(&mut grads[a.0], da);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); k * n];
                    // aᵀ (k×m) · g (m×n)
                    let ad = self.value(*a).data();
                    T::gemm(k, m, n, T::one(), ad, 1, k as isize, g, n as isize, 1, T::zero(), &mut db, n as isize, 1);
                    accumulate(&mut grads[b.0], db);
                }
            }
            Op::MatMulNT { a, b } => {
                let (m, k) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).rows();
                if self.wants(*a) {
                    let mut da = vec![T::zero(); m * k];
                    // g (m×n) · b (n×k)
                    let bd = self.value(*b).data();
                    T::gemm(m, n, k, T::one(), g, n as isize, 1, bd, k as isize, 1, T::zero(), &mut da, k as isize, 1);
                    accumulate(&mut grads[a.0], da);
                }
                if self.wants(*b) {
                    let mut db = vec![T::zero(); n * k];
                    // gᵀ (n×m) · a (m×k)
                    let ad = self.value(*a).data();
                    T::gemm(n, m, k, T::one(), g, 1, n as isize, ad, k as isize, 1, T::zero(), &mut db, k as isize, 1);
                    accumulate(&mut grads[b.0], db);
                }
            }
            Op::Transpose { x } => {
                if self.wants(*x) {
                    let (r, c) = (self.value(*x).rows(), self.value(*x).cols());
                    let mut dx = vec![T::zero(); r * c];
                    for i in 0..r {
                        for j in 0..c {
                            dx[i * c + j] = g[j * r + i];
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.to_vec());
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g.to_vec());
                }
            }
            Op::Sub { a, b } => {
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.to_vec());
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g.iter().map(|&v| -v).collect());
                }
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    accumulate(&mut grads[a.0], g.iter().zip(bv).map(|(&g, &y)| g * y).collect());
                }
                if self.wants(*b) {
                    accumulate(&mut grads[b.0], g.iter().zip(av).map(|(&g, &x)| g * x).collect());
                }
            }
            Op::AddRow { x, bias } => {
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], g.to_vec());
                }
                if self.wants(*bias) {
                    let mut db = vec![T::zero(); out_cols];
                    for row in g.chunks(out_cols) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
                    }
                    accumulate(&mut grads[bias.0], db);
                }
            }
            Op::Scale { x, factor } => {
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], g.iter().map(|&v| v * *factor).collect());
                }
            }
            Op::Gelu { x } => {
                if self.wants(*x) {
                    let half = T::from_f64_lossy(0.5);
                    let inv_sqrt2 = T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2);
                    let inv_sqrt_2pi = T::from_f64_lossy(0.398_942_280_401_432_7);
                    let dx = self
                        .value(*x)
                        .data()
                        .iter()
                        .zip(g)
                        .map(|(&v, &g)| {
                            let cdf = half * (T::one() + (v * inv_sqrt2).erf());
                            let pdf = inv_sqrt_2pi * (-half * v * v).exp();
                            g * (cdf + v * pdf)
                        })
                        .collect();
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::SoftmaxRows { x } => {
                if self.wants(*x) {
                    let y = node.value.data();
                    let mut dx = vec![T::zero(); y.len()];
                    for ((dxr, yr), gr) in dx.chunks_mut(out_cols).zip(y.chunks(out_cols)).zip(g.chunks(out_cols)) {
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..out_cols {
                            dxr[j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let d = out_cols;
                let gm = self.value(*gamma).data();
                if self.wants(*gamma) {
                    let mut dg = vec![T::zero(); d];
                    for (gr, hr) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] = dg[j] + gr[j] * hr[j];
                        }
                    }
                    accumulate(&mut grads[gamma.0], dg);
                }
                if self.wants(*beta) {
                    let mut dbeta = vec![T::zero(); d];
                    for gr in g.chunks(d) {
                        dbeta.iter_mut().zip(gr).for_each(|(a, &b)| *a = *a + b);
                    }
                    accumulate(&mut grads[beta.0], dbeta);
                }
                if self.wants(*x) {
                    let n = T::from_usize(d).expect("width fits");
                    let mut dx = vec![T::zero(); g.len()];
                    for (r, (gr, hr)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            let dh = gr[j] * gm[j];
                            mean_dh = mean_dh + dh;
                            mean_dh_h = mean_dh_h + dh * hr[j];
                        }
                        mean_dh = mean_dh / n;
                        mean_dh_h = mean_dh_h / n;
                        for j in 0..d {
                            let dh = gr[j] * gm[j];
                            dx[r * d + j] = rstd[r] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::Sum { x } => {
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], vec![g[0]; self.value(*x).numel()]);
                }
            }
            Op::Mean { x } => {
                if self.wants(*x) {
                    let n = self.value(*x).numel();
                    let v = g[0] / T::from_usize(n).expect("count fits");
                    accumulate(&mut grads[x.0], vec![v; n]);
                }
            }
            Op::MeanRows { x } => {
                if self.wants(*x) {
                    let rows = self.value(*x).rows();
                    let inv = T::one() / T::from_usize(rows).expect("count fits");
                    let row: Vec<T> = g.iter().map(|&v| v * inv).collect();
                    accumulate(&mut grads[x.0], row.repeat(rows));
                }
            }
            Op::MaxRows { x, argmax } => {
                if self.wants(*x) {
                    let cols = out_cols;
                    let mut dx = vec![T::zero(); self.value(*x).numel()];
                    for (j, &r) in argmax.iter().enumerate() {
                        dx[r * cols + j] = g[j];
                    }
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for p in parts {
                    let n = self.value(*p).numel();
                    if self.wants(*p) {
                        accumulate(&mut grads[p.0], g[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::ConcatCols { parts } => {
                let rows = node.value.rows();
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.wants(*p) {
                        let mut dp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            dp.extend_from_slice(&g[r * out_cols + start..r * out_cols + start + w]);
                        }
                        accumulate(&mut grads[p.0], dp);
                    }
                    start += w;
                }
            }
            Op::SliceRows { x, start } => {
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); self.value(*x).numel()];
                    let off = start * out_cols;
                    dx[off..off + g.len()].copy_from_slice(g);
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::SliceCols { x, start } => {
                if self.wants(*x) {
                    let src_cols = self.value(*x).cols();
                    let mut dx = vec![T::zero(); self.value(*x).numel()];
                    for (r, gr) in g.chunks(out_cols).enumerate() {
                        dx[r * src_cols + start..r * src_cols + start + out_cols].copy_from_slice(gr);
                    }
                    accumulate(&mut grads[x.0], dx);
                }
            }
            Op::GatherRows { table, index } => {
                if self.wants(*table) {
                    let mut dt = vec![T::zero(); self.value(*table).numel()];
                    for (gr, &row) in g.chunks(out_cols).zip(index) {
                        let dst = &mut dt[row * out_cols..(row + 1) * out_cols];
                        dst.iter_mut().zip(gr).for_each(|(a, &b)| *a = *a + b);
                    }
                    accumulate(&mut grads[table.0], dt);
                }
            }
            Op::BceWithLogits { logits, targets } => {
                if self.wants(*logits) {
                    let z = self.value(*logits).data();
                    let scale = g[0] / T::from_usize(z.len()).expect("count fits");
                    let dz = z
                        .iter()
                        .zip(targets)
                        .map(|(&z, &t)| (sigmoid(z) - t) * scale)
                        .collect();
                    accumulate(&mut grads[logits.0], dz);
                }
            }
        }
    }
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}
