//! Dense row-major `f64` arrays of rank 2 and 3.
//!
//! Only the handful of kernels the linear models need live here: matrix
//! product, time/feature permutation and an affine map along the last axis.
//! Every multiply-accumulate executed by [`matmul`] and [`batched_affine`]
//! is tallied in a thread-local counter (see [`mac_counter`]) so that the
//! profiler's closed-form counts can be checked against what actually ran.

use std::cell::Cell;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("matmul shape mismatch: left is {left:?}, right is {right:?}")]
    Matmul {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("affine shape mismatch: input {input:?}, weight {weight:?}, bias length {bias}")]
    Affine {
        input: (usize, usize, usize),
        weight: (usize, usize),
        bias: usize,
    },
    #[error("buffer of length {len} does not fit shape {shape:?}")]
    Buffer { len: usize, shape: Vec<usize> },
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Mismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
}

/// Row-major matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2 {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, ShapeError> {
        if data.len() != rows * cols {
            return Err(ShapeError::Buffer {
                len: data.len(),
                shape: vec![rows, cols],
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input; meant for
    /// literals in tests and examples.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor2({}x{}) ", self.rows, self.cols)?;
        f.debug_list()
            .entries((0..self.rows).map(|r| self.row(r)))
            .finish()
    }
}

/// Rank-3 array, usually laid out as (batch, time, feature) or, after a
/// permutation, (batch, feature, time).
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    batch: usize,
    axis1: usize,
    axis2: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(batch: usize, axis1: usize, axis2: usize) -> Self {
        Self {
            batch,
            axis1,
            axis2,
            data: vec![0.0; batch * axis1 * axis2],
        }
    }

    pub fn from_vec(
        batch: usize,
        axis1: usize,
        axis2: usize,
        data: Vec<f64>,
    ) -> Result<Self, ShapeError> {
        if data.len() != batch * axis1 * axis2 {
            return Err(ShapeError::Buffer {
                len: data.len(),
                shape: vec![batch, axis1, axis2],
            });
        }
        Ok(Self {
            batch,
            axis1,
            axis2,
            data,
        })
    }

    pub fn filled(batch: usize, axis1: usize, axis2: usize, value: f64) -> Self {
        Self {
            batch,
            axis1,
            axis2,
            data: vec![value; batch * axis1 * axis2],
        }
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn axis1(&self) -> usize {
        self.axis1
    }

    pub fn axis2(&self) -> usize {
        self.axis2
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.axis1, self.axis2)
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

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn offset(&self, b: usize, i: usize, j: usize) -> usize {
        (b * self.axis1 + i) * self.axis2 + j
    }

    #[inline]
    pub fn get(&self, b: usize, i: usize, j: usize) -> f64 {
        self.data[self.offset(b, i, j)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, i: usize, j: usize, v: f64) {
        let o = self.offset(b, i, j);
        self.data[o] = v;
    }

    /// The contiguous `axis2` slice at `(b, i)`.
    pub fn lane(&self, b: usize, i: usize) -> &[f64] {
        let o = self.offset(b, i, 0);
        &self.data[o..o + self.axis2]
    }

    /// Copies out items `[start, end)` of the batch axis.
    pub fn slice_batch(&self, start: usize, end: usize) -> Tensor3 {
        let stride = self.axis1 * self.axis2;
        Tensor3 {
            batch: end - start,
            axis1: self.axis1,
            axis2: self.axis2,
            data: self.data[start * stride..end * stride].to_vec(),
        }
    }

    /// Stacks tensors of identical trailing shape along the batch axis.
    pub fn concat_batch(parts: &[Tensor3]) -> Result<Tensor3, ShapeError> {
        let Some(first) = parts.first() else {
            return Ok(Tensor3::zeros(0, 0, 0));
        };
        let mut data = Vec::with_capacity(parts.iter().map(Tensor3::len).sum());
        let mut batch = 0;
        for p in parts {
            if (p.axis1, p.axis2) != (first.axis1, first.axis2) {
                return Err(ShapeError::Mismatch {
                    expected: vec![p.batch, first.axis1, first.axis2],
                    actual: vec![p.batch, p.axis1, p.axis2],
                });
            }
            batch += p.batch;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor3 {
            batch,
            axis1: first.axis1,
            axis2: first.axis2,
            data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            batch: self.batch,
            axis1: self.axis1,
            axis2: self.axis2,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self * alpha + other * beta`, elementwise.
    pub fn axpby(&self, alpha: f64, other: &Tensor3, beta: f64) -> Result<Tensor3, ShapeError> {
        self.check_same_shape(other)?;
        Ok(Tensor3 {
            batch: self.batch,
            axis1: self.axis1,
            axis2: self.axis2,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| alpha * a + beta * b)
                .collect(),
        })
    }

    pub fn check_same_shape(&self, other: &Tensor3) -> Result<(), ShapeError> {
        if self.shape() != other.shape() {
            let (a, b, c) = self.shape();
            let (x, y, z) = other.shape();
            return Err(ShapeError::Mismatch {
                expected: vec![a, b, c],
                actual: vec![x, y, z],
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor3({}x{}x{}) {:?}",
            self.batch, self.axis1, self.axis2, self.data
        )
    }
}

thread_local! {
    static MACS: Cell<u64> = const { Cell::new(0) };
}

/// Thread-local tally of multiply-accumulates executed by the kernels in
/// this module.
pub mod mac_counter {
    use super::MACS;

    pub fn reset() {
        MACS.with(|c| c.set(0));
    }

    pub fn get() -> u64 {
        MACS.with(|c| c.get())
    }

    /// Runs `f` and returns its result together with the MACs it executed
    /// on the current thread.
    pub fn measure<R>(f: impl FnOnce() -> R) -> (R, u64) {
        let before = get();
        let r = f();
        (r, get() - before)
    }

    pub(super) fn add(n: u64) {
        MACS.with(|c| c.set(c.get() + n));
    }
}

#[inline]
fn dot_counted(a: &[f64], b: &[f64], macs: &mut u64) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
        *macs += 1;
    }
    acc
}

/// Standard matrix product `a · b`.
pub fn matmul(a: &Tensor2, b: &Tensor2) -> Result<Tensor2, ShapeError> {
    if a.cols != b.rows {
        return Err(ShapeError::Matmul {
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Tensor2::zeros(a.rows, b.cols);
    let mut macs = 0u64;
    // i-k-j order keeps the inner loop on contiguous rows of `b` and `out`.
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            let b_row = &b.data[k * b.cols..(k + 1) * b.cols];
            for (o, &bkj) in out_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
                macs += 1;
            }
        }
    }
    mac_counter::add(macs);
    Ok(out)
}

/// Swaps axis1 and axis2: element `(b, i, j)` moves to `(b, j, i)`.
pub fn permute_time_feature(x: &Tensor3) -> Tensor3 {
    let (nb, n1, n2) = x.shape();
    let mut out = Tensor3::zeros(nb, n2, n1);
    for b in 0..nb {
        let src = &x.data[b * n1 * n2..(b + 1) * n1 * n2];
        let dst = &mut out.data[b * n1 * n2..(b + 1) * n1 * n2];
        for i in 0..n1 {
            for j in 0..n2 {
                dst[j * n1 + i] = src[i * n2 + j];
            }
        }
    }
    out
}

/// Applies `w · v + bias` to every last-axis vector `v = x[b, i, :]`.
///
/// `w` is `out_dim × in_dim`; the result has last axis `out_dim`.
pub fn batched_affine(x: &Tensor3, w: &Tensor2, bias: &[f64]) -> Result<Tensor3, ShapeError> {
    if x.axis2 != w.cols || bias.len() != w.rows {
        return Err(ShapeError::Affine {
            input: x.shape(),
            weight: w.shape(),
            bias: bias.len(),
        });
    }
    let lanes = x.batch * x.axis1;
    let mut out = Tensor3::zeros(x.batch, x.axis1, w.rows);
    let mut macs = 0u64;
    for lane in 0..lanes {
        let src = &x.data[lane * x.axis2..(lane + 1) * x.axis2];
        let dst = &mut out.data[lane * w.rows..(lane + 1) * w.rows];
        for (r, d) in dst.iter_mut().enumerate() {
            *d = dot_counted(w.row(r), src, &mut macs) + bias[r];
        }
    }
    mac_counter::add(macs);
    Ok(out)
}

/// Affine map applied lane by lane with a caller-chosen weight per lane.
///
/// `pick(lane_index)` returns the `(weight, bias)` to use for the lane at
/// flat position `b * axis1 + i`. All weights must share one shape.
pub fn batched_affine_by_lane<'a>(
    x: &Tensor3,
    out_dim: usize,
    pick: impl Fn(usize) -> (&'a Tensor2, &'a [f64]),
) -> Result<Tensor3, ShapeError> {
    let lanes = x.batch * x.axis1;
    let mut out = Tensor3::zeros(x.batch, x.axis1, out_dim);
    let mut macs = 0u64;
    for lane in 0..lanes {
        let (w, bias) = pick(lane);
        if w.cols != x.axis2 || w.rows != out_dim || bias.len() != out_dim {
            return Err(ShapeError::Affine {
                input: x.shape(),
                weight: w.shape(),
                bias: bias.len(),
            });
        }
        let src = &x.data[lane * x.axis2..(lane + 1) * x.axis2];
        let dst = &mut out.data[lane * out_dim..(lane + 1) * out_dim];
        for (r, d) in dst.iter_mut().enumerate() {
            *d = dot_counted(w.row(r), src, &mut macs) + bias[r];
        }
    }
    mac_counter::add(macs);
    Ok(out)
}
