//! Dense n-dimensional arrays of 64-bit reals with row-major layout.
//!
//! Tensors are immutable values after construction: every kernel returns a
//! fresh tensor, so values can be shared freely across threads. All kernels
//! accumulate in a fixed (row-major) order, making results bit-stable across
//! runs.

use crate::error::TensorError;
use rand::Rng;

/// Dense f64 tensor. Rank 0 is a scalar, rank 1 a vector, rank 2 a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    strides: Vec<usize>,
    data: Vec<f64>,
}

/// Row-major strides for a shape (in elements).
pub fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected = numel(&shape);
        if expected != data.len() {
            return Err(TensorError::ElementCount {
                shape,
                expected,
                actual: data.len(),
            });
        }
        let strides = row_major_strides(&shape);
        Ok(Tensor {
            shape,
            strides,
            data,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            strides: vec![],
            data: vec![value],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::new(shape.to_vec(), vec![0.0; numel(shape)]).expect("consistent")
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor::new(shape.to_vec(), vec![value; numel(shape)]).expect("consistent")
    }

    /// Identity matrix of extent n.
    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let n = numel(shape);
        let mut data = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..n {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Tensor::new(shape.to_vec(), data).expect("consistent")
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Tensor::new(vec![values.len()], values.to_vec()).expect("consistent")
    }

    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let data = (0..numel(shape)).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::new(shape.to_vec(), data).expect("consistent")
    }

    pub fn rand_normal(shape: &[usize], mean: f64, std: f64, rng: &mut impl Rng) -> Self {
        // Box-Muller keeps us independent of rand_distr.
        let n = numel(shape);
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            data.push(mean + std * r * theta.cos());
            if data.len() < n {
                data.push(mean + std * r * theta.sin());
            }
        }
        Tensor::new(shape.to_vec(), data).expect("consistent")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64, TensorError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::ElementCount {
                shape: self.shape.clone(),
                expected: 1,
                actual: self.data.len(),
            })
        }
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        debug_assert_eq!(index.len(), self.rank());
        let flat: usize = index
            .iter()
            .zip(&self.strides)
            .map(|(i, s)| i * s)
            .sum();
        self.data[flat]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let flat: usize = index
            .iter()
            .zip(&self.strides)
            .map(|(i, s)| i * s)
            .sum();
        self.data[flat] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.data.iter().map(|&x| f(x)).collect();
        Tensor::new(self.shape.clone(), data).expect("consistent")
    }

    pub fn has_nan(&self) -> bool {
        self.data.iter().any(|x| x.is_nan())
    }

    // ── Linear algebra ──────────────────────────────────────────────

    /// Matrix product of (m,k) and (k,n).
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.rank() != 2 || other.rank() != 2 || self.shape[1] != other.shape[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let n = other.shape[1];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                let row = &other.data[p * n..(p + 1) * n];
                let dst = &mut out[i * n..(i + 1) * n];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// Batched matrix product of (b,p,q) and (b,q,r).
    pub fn bmm(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.rank() != 3 || other.rank() != 3 {
            return Err(TensorError::ShapeMismatch {
                op: "bmm",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        if self.shape[0] != other.shape[0] {
            return Err(TensorError::BatchMismatch {
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        if self.shape[2] != other.shape[1] {
            return Err(TensorError::ShapeMismatch {
                op: "bmm",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (b, p, q) = (self.shape[0], self.shape[1], self.shape[2]);
        let r = other.shape[2];
        let mut out = vec![0.0; b * p * r];
        for s in 0..b {
            for i in 0..p {
                for t in 0..q {
                    let a = self.data[s * p * q + i * q + t];
                    for j in 0..r {
                        out[s * p * r + i * r + j] += a * other.data[s * q * r + t * r + j];
                    }
                }
            }
        }
        Tensor::new(vec![b, p, r], out)
    }

    /// Generalized dot product: sum of the element-wise product over all axes.
    pub fn gdot(&self, other: &Tensor) -> Result<f64, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op: "gdot",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .sum())
    }

    // ── Element-wise with broadcasting ──────────────────────────────

    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_broadcast(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_broadcast(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_broadcast(other, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_broadcast(other, |a, b| a / b)
    }

    pub fn zip_broadcast(
        &self,
        other: &Tensor,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        let shape = broadcast_shapes(&self.shape, &other.shape)?;
        let lhs = BroadcastIter::new(&self.shape, &self.strides, &shape);
        let rhs = BroadcastIter::new(&other.shape, &other.strides, &shape);
        let data = lhs
            .zip(rhs)
            .map(|(i, j)| f(self.data[i], other.data[j]))
            .collect();
        Tensor::new(shape, data)
    }

    pub fn neg(&self) -> Tensor {
        self.map(|x| -x)
    }

    pub fn exp(&self) -> Tensor {
        self.map(f64::exp)
    }

    /// Natural logarithm; requires strictly positive entries.
    pub fn ln(&self) -> Result<Tensor, TensorError> {
        if self.data.iter().any(|&x| x <= 0.0) {
            return Err(TensorError::Domain {
                op: "log",
                reason: "log requires positive inputs".into(),
            });
        }
        Ok(self.map(f64::ln))
    }

    pub fn abs(&self) -> Tensor {
        self.map(f64::abs)
    }

    pub fn powf(&self, p: f64) -> Tensor {
        self.map(|x| x.powf(p))
    }

    pub fn sqrt(&self) -> Tensor {
        self.map(f64::sqrt)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|x| x * s)
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        self.map(|x| x + s)
    }

    // ── Reductions ──────────────────────────────────────────────────

    pub fn sum_axes(&self, axes: &[usize], keep_dims: bool) -> Result<Tensor, TensorError> {
        self.reduce_axes(axes, keep_dims, 0.0, |acc, x| acc + x, |acc, _| acc)
    }

    pub fn mean_axes(&self, axes: &[usize], keep_dims: bool) -> Result<Tensor, TensorError> {
        self.reduce_axes(
            axes,
            keep_dims,
            0.0,
            |acc, x| acc + x,
            |acc, count| acc / count as f64,
        )
    }

    pub fn max_axes(&self, axes: &[usize], keep_dims: bool) -> Result<Tensor, TensorError> {
        self.reduce_axes(
            axes,
            keep_dims,
            f64::NEG_INFINITY,
            |acc, x| acc.max(x),
            |acc, _| acc,
        )
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean_all(&self) -> f64 {
        self.sum_all() / self.data.len() as f64
    }

    pub fn max_all(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    fn reduce_axes(
        &self,
        axes: &[usize],
        keep_dims: bool,
        init: f64,
        fold: impl Fn(f64, f64) -> f64,
        finish: impl Fn(f64, usize) -> f64,
    ) -> Result<Tensor, TensorError> {
        let rank = self.rank();
        let mut reduced = vec![false; rank];
        for &ax in axes {
            if ax >= rank {
                return Err(TensorError::InvalidAxis { axis: ax, rank });
            }
            if reduced[ax] {
                return Err(TensorError::InvalidAxis { axis: ax, rank });
            }
            reduced[ax] = true;
        }
        let out_shape: Vec<usize> = if keep_dims {
            self.shape
                .iter()
                .enumerate()
                .map(|(i, &e)| if reduced[i] { 1 } else { e })
                .collect()
        } else {
            self.shape
                .iter()
                .enumerate()
                .filter(|(i, _)| !reduced[*i])
                .map(|(_, &e)| e)
                .collect()
        };
        let count: usize = self
            .shape
            .iter()
            .enumerate()
            .filter(|(i, _)| reduced[*i])
            .map(|(_, &e)| e)
            .product();
        let out_strides = row_major_strides(&out_shape);
        let mut out = vec![init; numel(&out_shape)];
        let mut idx = vec![0usize; rank];
        for &x in &self.data {
            let mut flat = 0usize;
            let mut out_ax = 0usize;
            for ax in 0..rank {
                if reduced[ax] {
                    if keep_dims {
                        out_ax += 1;
                    }
                } else {
                    flat += idx[ax] * out_strides[out_ax];
                    out_ax += 1;
                }
            }
            out[flat] = fold(out[flat], x);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < self.shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        for v in &mut out {
            *v = finish(*v, count);
        }
        Tensor::new(out_shape, out)
    }

    // ── Stable softmax family (last axis) ───────────────────────────

    /// Row-wise softmax over the last axis, stabilized by the row maximum.
    pub fn softmax(&self, temperature: f64) -> Result<Tensor, TensorError> {
        if temperature <= 0.0 {
            return Err(TensorError::Domain {
                op: "softmax",
                reason: format!("temperature must be positive, got {temperature}"),
            });
        }
        if self.has_nan() {
            return Err(TensorError::NonFinite { op: "softmax" });
        }
        if self.rank() == 0 {
            return Ok(Tensor::scalar(1.0));
        }
        let n = *self.shape.last().unwrap();
        if n == 0 {
            return Err(TensorError::Empty { op: "softmax" });
        }
        let mut data = self.data.clone();
        for row in data.chunks_mut(n) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = ((*v - m) / temperature).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Tensor::new(self.shape.clone(), data)
    }

    /// log Σ exp over the last axis, shifted by the row maximum so the
    /// largest exponentiated term is exactly one.
    pub fn logsumexp(&self) -> Result<Tensor, TensorError> {
        if self.rank() == 0 {
            return Ok(self.clone());
        }
        let n = *self.shape.last().unwrap();
        if n == 0 {
            return Err(TensorError::Empty { op: "logsumexp" });
        }
        let out_shape: Vec<usize> = self.shape[..self.rank() - 1].to_vec();
        let mut out = Vec::with_capacity(self.data.len() / n);
        for row in self.data.chunks(n) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                out.push(f64::NEG_INFINITY);
                continue;
            }
            let s: f64 = row.iter().map(|&v| (v - m).exp()).sum();
            out.push(m + s.ln());
        }
        Tensor::new(out_shape, out)
    }

    // ── Shape manipulation ──────────────────────────────────────────

    /// Reinterprets the flat row-major data under a new shape.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor, TensorError> {
        if numel(shape) != self.data.len() {
            return Err(TensorError::ElementCount {
                shape: shape.to_vec(),
                expected: numel(shape),
                actual: self.data.len(),
            });
        }
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    /// Permutes axes; `perm` must be a permutation of 0..rank.
    pub fn transpose(&self, perm: &[usize]) -> Result<Tensor, TensorError> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank {
            return Err(TensorError::InvalidAxis {
                axis: perm.len(),
                rank,
            });
        }
        for &p in perm {
            if p >= rank || seen[p] {
                return Err(TensorError::InvalidAxis { axis: p, rank });
            }
            seen[p] = true;
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let mut out = Tensor::zeros(&out_shape);
        let mut idx = vec![0usize; rank];
        let mut src_index = vec![0usize; rank];
        for flat in 0..self.data.len() {
            for (o, &p) in perm.iter().enumerate() {
                src_index[o] = idx[p];
            }
            out.data[flat_index(&src_index, &out.strides)] = self.data[flat];
            let _ = src_index;
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < self.shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
            let _ = flat;
        }
        Ok(out)
    }

    /// 2-D transpose convenience.
    pub fn t(&self) -> Result<Tensor, TensorError> {
        self.transpose(&[1, 0])
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor, TensorError> {
        let first = parts.first().ok_or(TensorError::Empty { op: "concat" })?;
        let rank = first.rank();
        if axis >= rank {
            return Err(TensorError::InvalidAxis { axis, rank });
        }
        let mut axis_total = 0usize;
        for p in parts {
            if p.rank() != rank {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape.clone(),
                    rhs: p.shape.clone(),
                });
            }
            for ax in 0..rank {
                if ax != axis && p.shape[ax] != first.shape[ax] {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        lhs: first.shape.clone(),
                        rhs: p.shape.clone(),
                    });
                }
            }
            axis_total += p.shape[axis];
        }
        let mut out_shape = first.shape.clone();
        out_shape[axis] = axis_total;
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for p in parts {
                let span = p.shape[axis] * inner;
                let start = o * span;
                out.extend_from_slice(&p.data[start..start + span]);
            }
        }
        Tensor::new(out_shape, out)
    }

    /// Rectangular slice: one half-open range per axis.
    pub fn slice(&self, ranges: &[(usize, usize)]) -> Result<Tensor, TensorError> {
        let rank = self.rank();
        if ranges.len() != rank {
            return Err(TensorError::InvalidAxis {
                axis: ranges.len(),
                rank,
            });
        }
        for (ax, &(lo, hi)) in ranges.iter().enumerate() {
            if lo > hi || hi > self.shape[ax] {
                return Err(TensorError::SliceOutOfBounds {
                    axis: ax,
                    range: (lo, hi),
                    extent: self.shape[ax],
                });
            }
        }
        let out_shape: Vec<usize> = ranges.iter().map(|&(lo, hi)| hi - lo).collect();
        let mut out = Tensor::zeros(&out_shape);
        let mut idx = vec![0usize; rank];
        for flat in 0..out.data.len() {
            let mut src = 0usize;
            for ax in 0..rank {
                src += (ranges[ax].0 + idx[ax]) * self.strides[ax];
            }
            out.data[flat] = self.data[src];
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                if idx[ax] < out_shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Ok(out)
    }

    /// Splits an image batch (n,c,h,w) into non-overlapping p×p patches,
    /// flattened to (n, hw/p², p²c) in raster order.
    pub fn patchify_nchw(&self, p: usize) -> Result<Tensor, TensorError> {
        if self.rank() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "patchify",
                lhs: self.shape.clone(),
                rhs: vec![],
            });
        }
        let (n, c, h, w) = (self.shape[0], self.shape[1], self.shape[2], self.shape[3]);
        if p == 0 || h % p != 0 || w % p != 0 {
            return Err(TensorError::Domain {
                op: "patchify",
                reason: format!("patch size {p} must divide spatial extents ({h},{w})"),
            });
        }
        let grid = self
            .reshape(&[n, c, h / p, p, w / p, p])?
            .transpose(&[0, 2, 4, 3, 5, 1])?;
        grid.reshape(&[n, (h / p) * (w / p), p * p * c])
    }

    // ── Broadcasting helpers ────────────────────────────────────────

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor, TensorError> {
        let iter = BroadcastIter::checked(&self.shape, &self.strides, shape).ok_or(
            TensorError::BroadcastError {
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            },
        )?;
        let data = iter.map(|i| self.data[i]).collect();
        Tensor::new(shape.to_vec(), data)
    }

    /// Sums over axes that were expanded by broadcasting so the result has
    /// `target` shape. Inverse of `broadcast_to` for gradients.
    pub fn reduce_to_shape(&self, target: &[usize]) -> Result<Tensor, TensorError> {
        if self.shape == target {
            return Ok(self.clone());
        }
        let rank = self.rank();
        let offset = rank - target.len();
        // Leading extra axes always reduce; aligned axes reduce when the
        // target extent is 1 and ours is not.
        let mut axes: Vec<usize> = (0..offset).collect();
        for (i, &e) in target.iter().enumerate() {
            if e == 1 && self.shape[offset + i] != 1 {
                axes.push(offset + i);
            }
        }
        let summed = self.sum_axes(&axes, true)?;
        summed.reshape(target)
    }
}

/// Right-aligned broadcast of two shapes; extent-1 axes repeat.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>, TensorError> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return Err(TensorError::BroadcastError {
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
    }
    Ok(out)
}

fn flat_index(index: &[usize], strides: &[usize]) -> usize {
    index.iter().zip(strides).map(|(i, s)| i * s).sum()
}

/// Iterates source flat indices for an operand broadcast to `out_shape`.
struct BroadcastIter {
    eff_strides: Vec<usize>,
    out_shape: Vec<usize>,
    idx: Vec<usize>,
    remaining: usize,
}

impl BroadcastIter {
    fn new(shape: &[usize], strides: &[usize], out_shape: &[usize]) -> Self {
        Self::checked(shape, strides, out_shape).expect("caller validated broadcast")
    }

    fn checked(shape: &[usize], strides: &[usize], out_shape: &[usize]) -> Option<Self> {
        let rank = out_shape.len();
        if shape.len() > rank {
            return None;
        }
        let offset = rank - shape.len();
        let mut eff = vec![0usize; rank];
        for i in 0..shape.len() {
            if shape[i] == out_shape[offset + i] {
                eff[offset + i] = strides[i];
            } else if shape[i] == 1 {
                eff[offset + i] = 0;
            } else {
                return None;
            }
        }
        Some(BroadcastIter {
            eff_strides: eff,
            out_shape: out_shape.to_vec(),
            idx: vec![0; rank],
            remaining: numel(out_shape),
        })
    }
}

impl Iterator for BroadcastIter {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        let flat = flat_index(&self.idx, &self.eff_strides);
        for ax in (0..self.out_shape.len()).rev() {
            self.idx[ax] += 1;
            if self.idx[ax] < self.out_shape[ax] {
                break;
            }
            self.idx[ax] = 0;
        }
        Some(flat)
    }
}

// ── JSON literal format: shape header + nested arrays ───────────────

impl Tensor {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "shape": self.shape,
            "data": nest(&self.shape, &self.data),
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Tensor, TensorError> {
        let shape: Vec<usize> = value
            .get("shape")
            .and_then(|s| s.as_array())
            .ok_or_else(|| TensorError::Decode("missing shape header".into()))?
            .iter()
            .map(|v| {
                v.as_u64()
                    .map(|u| u as usize)
                    .ok_or_else(|| TensorError::Decode("non-integer extent".into()))
            })
            .collect::<Result<_, _>>()?;
        let mut data = Vec::with_capacity(numel(&shape));
        let body = value
            .get("data")
            .ok_or_else(|| TensorError::Decode("missing data".into()))?;
        flatten(body, &mut data)?;
        Tensor::new(shape, data)
    }
}

fn nest(shape: &[usize], data: &[f64]) -> serde_json::Value {
    match shape {
        [] => serde_json::json!(data[0]),
        [_] => serde_json::json!(data),
        [head, rest @ ..] => {
            let span = data.len() / head;
            let rows: Vec<_> = (0..*head)
                .map(|i| nest(rest, &data[i * span..(i + 1) * span]))
                .collect();
            serde_json::Value::Array(rows)
        }
    }
}

fn flatten(value: &serde_json::Value, out: &mut Vec<f64>) -> Result<(), TensorError> {
    match value {
        serde_json::Value::Number(n) => {
            out.push(
                n.as_f64()
                    .ok_or_else(|| TensorError::Decode("bad number".into()))?,
            );
            Ok(())
        }
        serde_json::Value::Array(items) => {
            for item in items {
                flatten(item, out)?;
            }
            Ok(())
        }
        other => Err(TensorError::Decode(format!("unexpected value {other}"))),
    }
}
