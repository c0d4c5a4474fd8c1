//! Row-major dense matrices and vectors in `f64`, plus the GEMM used by the
//! batched training paths.

use serde::{Deserialize, Serialize};
use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::exec;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector(pub Vec<f64>);

impl DenseVector {
    pub fn zeros(n: usize) -> Self {
        DenseVector(vec![0.0; n])
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(v: Vec<f64>) -> Self {
        DenseVector(v)
    }
}

impl Deref for DenseVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for DenseVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape("DenseMatrix::from_vec", rows * cols, data.len()));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::shape("DenseMatrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self · x` without bias.
    pub fn matvec(&self, x: &[f64]) -> Result<DenseVector> {
        if x.len() != self.cols {
            return Err(Error::shape("matvec", self.cols, x.len()));
        }
        Ok(DenseVector(
            (0..self.rows).map(|i| dot(self.row(i), x)).collect(),
        ))
    }

    /// `selfᵀ · y`.
    pub fn matvec_t(&self, y: &[f64]) -> Result<DenseVector> {
        if y.len() != self.rows {
            return Err(Error::shape("matvec_t", self.rows, y.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi == 0.0 {
                continue;
            }
            axpy(yi, self.row(i), &mut out);
        }
        Ok(DenseVector(out))
    }
}

/// Returns `W x + b`.
pub fn linear_forward(w: &DenseMatrix, b: &[f64], x: &[f64]) -> Result<DenseVector> {
    if x.len() != w.cols() {
        return Err(Error::shape("linear_forward (input)", w.cols(), x.len()));
    }
    if b.len() != w.rows() {
        return Err(Error::shape("linear_forward (bias)", w.rows(), b.len()));
    }
    Ok(DenseVector(
        (0..w.rows()).map(|i| dot(w.row(i), x) + b[i]).collect(),
    ))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0, |s, (x, y)| s + x * y)
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Borrowed row-major matrix view, optionally transposed.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> MatRef<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            transposed: false,
        }
    }

    pub fn t(self) -> Self {
        MatRef {
            transposed: !self.transposed,
            ..self
        }
    }

    /// Logical shape after the optional transpose.
    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    /// (row stride, col stride) of the logical matrix.
    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

impl<'a> From<&'a DenseMatrix> for MatRef<'a> {
    fn from(m: &'a DenseMatrix) -> Self {
        MatRef::new(&m.data, m.rows, m.cols)
    }
}

/// Minimum output rows per parallel GEMM block.
const GEMM_BLOCK_ROWS: usize = 64;

/// `C = alpha · A · B + beta · C` with `C` row-major `m × n`.
///
/// Large products are split into row blocks of `C` and computed in parallel.
/// Each output element is produced by the same kernel regardless of the
/// split, so the result does not depend on the execution mode.
pub fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) -> Result<()> {
    let (m, k) = a.shape();
    let (kb, n) = b.shape();
    if k != kb {
        return Err(Error::shape("gemm (inner dimension)", k, kb));
    }
    if c.len() != m * n {
        return Err(Error::shape("gemm (output)", m * n, c.len()));
    }
    if a.data.len() != a.rows * a.cols || b.data.len() != b.rows * b.cols {
        return Err(Error::InvalidInput("gemm operand storage size".into()));
    }
    if m == 0 || n == 0 {
        return Ok(());
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    let work = m * n * k.max(1);
    let block = if exec::workers() > 1 && work > 1 << 20 {
        GEMM_BLOCK_ROWS.max(m.div_ceil(exec::workers() * 4))
    } else {
        m
    };
    exec::for_each_chunk_mut(c, block * n, |bi, c_block| {
        let row0 = bi * block;
        let rows = c_block.len() / n;
        let a_off = row0 as isize * rsa;
        // SAFETY: operand lengths were checked above; the block covers rows
        // [row0, row0 + rows) of A and C, all strides stay inside the slices.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                k,
                n,
                alpha,
                a.data.as_ptr().offset(a_off),
                rsa,
                csa,
                b.data.as_ptr(),
                rsb,
                csb,
                beta,
                c_block.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
    Ok(())
}
