// SPDX-License-Identifier: MIT OR Apache-2.0

//! Dense row-major `f64` matrices and vectors.
//!
//! Only what the decoder and the probes need: products, transposes and a
//! max-subtracted row softmax. Negative infinity is the mask sentinel and
//! maps to an exact zero weight.

use std::fmt;

use crate::error::{shape, Error, Result};

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Wraps `data` as a `rows × cols` matrix.
    ///
    /// # Errors
    ///
    /// [`Error::Shape`] if `data.len() != rows * cols`.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let expected = rows
            .checked_mul(cols)
            .ok_or_else(|| shape(format!("{rows}x{cols} overflows")))?;
        if data.len() != expected {
            return Err(shape(format!(
                "{rows}x{cols} matrix needs {expected} entries, got {}",
                data.len()
            )));
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

    /// Builds a matrix from equal-length rows.
    ///
    /// # Errors
    ///
    /// [`Error::Shape`] on ragged input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(shape(format!("row {i} has {} entries, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
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
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// True when no entry is NaN or infinite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Copies rows `[start, end)` into a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Stacks `self` on top of `below`.
    ///
    /// # Errors
    ///
    /// [`Error::Shape`] when column counts differ.
    pub fn vstack(&self, below: &Self) -> Result<Self> {
        if self.cols != below.cols {
            return Err(shape(format!("vstack {} vs {} columns", self.cols, below.cols)));
        }
        let mut data = Vec::with_capacity(self.data.len() + below.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&below.data);
        Ok(Self {
            rows: self.rows + below.rows,
            cols: self.cols,
            data,
        })
    }

    /// Multiplies every entry by `s`.
    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Elementwise `self - other`.
    ///
    /// # Errors
    ///
    /// [`Error::Shape`] when shapes differ.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other, "sub")?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// Frobenius norm.
    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(shape(format!(
                "{op}: {}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)?;
        f.debug_list()
            .entries((0..self.rows).map(|r| self.row(r)))
            .finish()
    }
}

/// Matrix product `a · b`.
///
/// # Errors
///
/// [`Error::Shape`] if `a.cols() != b.rows()`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(shape(format!(
            "matmul {}x{} · {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            axpy(aik, b.row(k), orow);
        }
    }
    Ok(out)
}

/// Row vector times matrix, `v · m`.
///
/// # Errors
///
/// [`Error::Shape`] if `v.len() != m.rows()`.
pub fn vecmat(v: &[f64], m: &Matrix) -> Result<Vector> {
    if v.len() != m.rows {
        return Err(shape(format!("vecmat {} · {}x{}", v.len(), m.rows, m.cols)));
    }
    let mut out = vec![0.0; m.cols];
    for (k, &vk) in v.iter().enumerate() {
        if vk == 0.0 {
            continue;
        }
        axpy(vk, m.row(k), &mut out);
    }
    Ok(Vector::from(out))
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

/// Softmax over each row, max-subtracted.
///
/// Entries equal to negative infinity get weight exactly zero.
///
/// # Errors
///
/// [`Error::DegenerateRow`] if a row has no finite entry or contains NaN or
/// positive infinity.
pub fn row_softmax(scores: &Matrix) -> Result<Matrix> {
    let mut out = scores.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r)).map_err(|e| match e {
            Error::DegenerateRow(msg) => Error::DegenerateRow(format!("row {r}: {msg}")),
            other => other,
        })?;
    }
    Ok(out)
}

/// In-place softmax of one row.
///
/// # Errors
///
/// See [`row_softmax`].
pub fn softmax_in_place(row: &mut [f64]) -> Result<()> {
    let mut max = f64::NEG_INFINITY;
    for &v in row.iter() {
        if v.is_nan() || v == f64::INFINITY {
            return Err(Error::DegenerateRow("non-finite score".into()));
        }
        if v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateRow("every entry is masked".into()));
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = if *v == f64::NEG_INFINITY {
            0.0
        } else {
            (*v - max).exp()
        };
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Vector
// ---------------------------------------------------------------------------

/// Dense `f64` vector.
#[derive(Clone, PartialEq, Default)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Self { data: vec![0.0; dim] }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.data.len()
    }

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

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Elementwise `self - other`. Panics on a length mismatch.
    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.dim(), other.dim(), "vector length mismatch");
        Self {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Self { data }
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Vector{:?}", self.data)
    }
}

// ---------------------------------------------------------------------------
// Slice kernels
// ---------------------------------------------------------------------------

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a * x`.
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded(rows: usize, cols: usize, seed: u64) -> Matrix {
        // Small LCG keeps these tests free of the rand dependency.
        let mut s = seed.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1);
        let data = (0..rows * cols)
            .map(|_| {
                s = s
                    .wrapping_mul(6_364_136_223_846_793_005)
                    .wrapping_add(1_442_695_040_888_963_407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_product_is_noop() {
        let m = Matrix::from_rows(&[vec![1.5, -2.0], vec![0.25, 7.0]]).unwrap();
        assert_eq!(matmul(&Matrix::identity(2), &m).unwrap(), m);
    }

    #[test]
    fn hand_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let p = matmul(&a, &b).unwrap();
        assert_eq!(p.as_slice(), &[2.0, 4.0]);
    }

    #[test]
    fn product_matches_triple_loop() {
        let a = seeded(4, 3, 1);
        let b = seeded(3, 5, 2);
        let p = matmul(&a, &b).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let mut acc = 0.0;
                for k in 0..3 {
                    acc += a.get(i, k) * b.get(k, j);
                }
                assert!((p.get(i, j) - acc).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn product_shape_mismatch() {
        let err = matmul(&seeded(2, 3, 0), &seeded(2, 3, 0)).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(Matrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn softmax_symmetric_row() {
        let s = row_softmax(&Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(s.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_masked_entry_is_zero() {
        for x in [-30.0, 0.0, 1e3] {
            let s = row_softmax(&Matrix::from_rows(&[vec![x, f64::NEG_INFINITY]]).unwrap()).unwrap();
            assert_eq!(s.as_slice(), &[1.0, 0.0]);
        }
    }

    #[test]
    fn softmax_all_masked_is_degenerate() {
        let m = Matrix::from_rows(&[vec![f64::NEG_INFINITY; 3]]).unwrap();
        assert!(matches!(row_softmax(&m), Err(Error::DegenerateRow(_))));
        let m = Matrix::from_rows(&[vec![0.0, f64::NAN]]).unwrap();
        assert!(matches!(row_softmax(&m), Err(Error::DegenerateRow(_))));
    }

    #[test]
    fn softmax_large_scores_do_not_overflow() {
        let s = row_softmax(&Matrix::from_rows(&[vec![1000.0, 1000.0, 999.0]]).unwrap()).unwrap();
        assert!(s.all_finite());
        assert!((s.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vecmat_matches_matmul() {
        let m = seeded(3, 4, 9);
        let v = [0.5, -1.0, 2.0];
        let a = vecmat(&v, &m).unwrap();
        let b = matmul(&Matrix::new(1, 3, v.to_vec()).unwrap(), &m).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn transpose_twice() {
        let m = seeded(3, 5, 4);
        assert_eq!(m.transpose().transpose(), m);
        assert_eq!(m.transpose().get(4, 2), m.get(2, 4));
    }
}
