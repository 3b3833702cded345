//! Column-major dense matrices and the handful of products the solvers need.
//!
//! Every product accumulates each output entry over the inner index in
//! ascending order, so identical inputs give bit-identical outputs no matter
//! which rank or which code path computes them.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Wraps column-major `data`. Rejects a wrong length or non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::BadLength {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "DenseMatrix::new" });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
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

    /// Builds a matrix from `f(row, col)`, filling column by column.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Row-major literal, mostly for tests: `from_rows(&[&[1., 2.], &[3., 4.]])`.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::BadLength {
                expected: r * c,
                actual: rows.iter().map(|row| row.len()).sum(),
            });
        }
        let mut data = Vec::with_capacity(r * c);
        for j in 0..c {
            for row in rows {
                data.push(row[j]);
            }
        }
        Self::new(r, c, data)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Column-major backing storage.
    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.rows + row]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[col * self.rows + row] = value;
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        let m = self.rows;
        &mut self.data[j * m..(j + 1) * m]
    }

    /// Copies row `i` out (rows are strided in column-major storage).
    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    /// Copies the contiguous column range `cols`.
    pub fn column_range(&self, cols: Range<usize>) -> Self {
        let m = self.rows;
        Self {
            rows: m,
            cols: cols.len(),
            data: self.data[cols.start * m..cols.end * m].to_vec(),
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Entrywise `self += other`.
    pub fn add_assign(&mut self, other: &DenseMatrix) -> Result<()> {
        self.check_same_shape("add_assign", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Entrywise `self - other`.
    pub fn sub(&self, other: &DenseMatrix) -> Result<Self> {
        self.check_same_shape("sub", other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0)
    }

    /// Largest absolute entry, 0 for an empty matrix.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }

    /// Concatenates equal-height matrices left to right.
    pub fn hstack(parts: &[DenseMatrix]) -> Result<Self> {
        let rows = parts.first().map_or(0, |p| p.rows);
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        let mut cols = 0;
        for p in parts {
            if p.rows != rows {
                return Err(Error::DimensionMismatch {
                    op: "hstack",
                    left: (rows, cols),
                    right: p.shape(),
                });
            }
            data.extend_from_slice(&p.data);
            cols += p.cols;
        }
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn check_same_shape(&self, op: &'static str, other: &DenseMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }
}

/// `sum_ij a_ij^2`.
pub fn frob_norm_sq(a: &DenseMatrix) -> f64 {
    sum_sq(a.as_slice())
}

/// Dense product `a * b`; entry `(i, j)` accumulates `p` ascending.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = DenseMatrix::zeros(a.rows, b.cols);
    for j in 0..b.cols {
        let out_col = out.col_mut(j);
        for p in 0..a.cols {
            axpy(b.get(p, j), a.col(p), out_col);
        }
    }
    Ok(out)
}

/// `a^T * b` without materializing the transpose.
pub fn matmul_tn(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows != b.rows {
        return Err(Error::DimensionMismatch {
            op: "matmul_tn",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(DenseMatrix::from_fn(a.cols, b.cols, |i, j| dot(a.col(i), b.col(j))))
}

/// `a * b^T`; entry `(i, j)` accumulates the shared column index ascending.
pub fn matmul_nt(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.cols {
        return Err(Error::DimensionMismatch {
            op: "matmul_nt",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = DenseMatrix::zeros(a.rows, b.rows);
    for p in 0..a.cols {
        let a_col = a.col(p);
        for j in 0..b.rows {
            axpy(b.get(j, p), a_col, out.col_mut(j));
        }
    }
    Ok(out)
}

/// Entrywise `max(0, a_ij)`. Negative zero maps to positive zero.
pub fn project_nonneg(a: &DenseMatrix) -> DenseMatrix {
    let mut out = a.clone();
    for v in out.as_mut_slice() {
        *v = nonneg(*v);
    }
    out
}

/// Splits `n` columns into `parts` contiguous `(start, len)` ranges. Sizes
/// differ by at most one and the first `n % parts` ranges get the extra column.
pub fn partition_columns(n: usize, parts: usize) -> Result<Vec<(usize, usize)>> {
    if n == 0 || parts == 0 {
        return Err(Error::Empty { op: "partition_columns" });
    }
    if parts > n {
        return Err(Error::TooManyParts { n, parts });
    }
    let base = n / parts;
    let extra = n % parts;
    let mut start = 0;
    Ok((0..parts)
        .map(|r| {
            let len = base + usize::from(r < extra);
            let range = (start, len);
            start += len;
            range
        })
        .collect())
}

/// One rank's contiguous slice of the columns of `X` and `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnBlock {
    pub owner_rank: usize,
    pub global_start: usize,
    pub x_block: DenseMatrix,
    pub c_block: DenseMatrix,
}

impl ColumnBlock {
    #[inline]
    pub fn local_cols(&self) -> usize {
        self.x_block.cols()
    }

    /// Block owned by `rank` when `x` and `c` are split across `parts` ranks.
    pub fn for_rank(x: &DenseMatrix, c: &DenseMatrix, rank: usize, parts: usize) -> Result<Self> {
        if x.cols() != c.cols() {
            return Err(Error::DimensionMismatch {
                op: "ColumnBlock::for_rank",
                left: x.shape(),
                right: c.shape(),
            });
        }
        let ranges = partition_columns(x.cols(), parts)?;
        let (start, len) = *ranges.get(rank).ok_or(Error::TooManyParts {
            n: x.cols(),
            parts: rank + 1,
        })?;
        Ok(Self {
            owner_rank: rank,
            global_start: start,
            x_block: x.column_range(start..start + len),
            c_block: c.column_range(start..start + len),
        })
    }

    /// All `parts` blocks, ordered by rank.
    pub fn split(x: &DenseMatrix, c: &DenseMatrix, parts: usize) -> Result<Vec<Self>> {
        (0..parts).map(|r| Self::for_rank(x, c, r, parts)).collect()
    }
}

/// Cholesky factor `L` of a symmetric positive definite matrix, `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

impl Cholesky {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::DimensionMismatch {
                op: "Cholesky::factor",
                left: a.shape(),
                right: a.shape(),
            });
        }
        // Row-major lower triangle.
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite { pivot: i });
                    }
                    l[i * n + i] = libm::sqrt(s);
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Self { n, l })
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * n + k] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * b[k];
            }
            b[i] = s / self.l[i * n + i];
        }
    }
}

#[inline]
pub(crate) fn nonneg(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

#[inline]
pub(crate) fn sum_sq(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |acc, x| acc + x * x)
}

/// `y += alpha * x`.
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = x_j - B c_j`, subtracting `b_k c_kj` for `k` ascending.
#[inline]
pub(crate) fn residual_column(x_j: &[f64], b: &DenseMatrix, c_j: &[f64], out: &mut [f64]) {
    out.copy_from_slice(x_j);
    for (k, &c) in c_j.iter().enumerate() {
        axpy(-c, b.col(k), out);
    }
}

/// `X - B C`, built column by column with [`residual_column`].
pub fn residual(x: &DenseMatrix, b: &DenseMatrix, c: &DenseMatrix) -> Result<DenseMatrix> {
    if x.rows() != b.rows() || b.cols() != c.rows() || x.cols() != c.cols() {
        return Err(Error::DimensionMismatch {
            op: "residual",
            left: x.shape(),
            right: (b.rows(), c.cols()),
        });
    }
    let mut e = DenseMatrix::zeros(x.rows(), x.cols());
    for j in 0..x.cols() {
        residual_column(x.col(j), b, c.col(j), e.col_mut(j));
    }
    Ok(e)
}

/// `1/2 ||X - BC||_F^2`, recomputed from scratch.
pub fn objective(x: &DenseMatrix, b: &DenseMatrix, c: &DenseMatrix) -> Result<f64> {
    Ok(0.5 * frob_norm_sq(&residual(x, b, c)?))
}
