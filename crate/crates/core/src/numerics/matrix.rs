use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix. Keys and values are stacked one per row.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    /// Checked constructor for external data: rejects wrong lengths and NaN/Inf.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("matrix input".into()));
        }
        Ok(Self { rows, cols, data })
    }

    /// Unchecked constructor for internally produced buffers.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimMismatch {
                    op: "from_rows",
                    left: (r, c),
                    right: (1, row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(r, c, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn row_vector(v: &[T]) -> Self {
        Self::from_raw(1, v.len(), v.to_vec())
    }

    pub fn scalar(x: T) -> Self {
        Self::from_raw(1, 1, vec![x])
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
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Vec::with_capacity(self.data.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                out.push(self.data[i * self.cols + j]);
            }
        }
        Self::from_raw(self.cols, self.rows, out)
    }

    pub fn matmul(&self, b: &Self) -> Result<Self> {
        if self.cols != b.rows {
            return Err(Error::DimMismatch {
                op: "matmul",
                left: self.shape(),
                right: b.shape(),
            });
        }
        Ok(self.matmul_unchecked(b))
    }

    pub(crate) fn matmul_unchecked(&self, b: &Self) -> Self {
        let (n, m, p) = (self.rows, self.cols, b.cols);
        let mut out = vec![T::zero(); n * p];
        for i in 0..n {
            let orow = &mut out[i * p..(i + 1) * p];
            for k in 0..m {
                let a = self.data[i * m + k];
                if a == T::zero() {
                    continue;
                }
                let brow = &b.data[k * p..(k + 1) * p];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += a * bv;
                }
            }
        }
        Self::from_raw(n, p, out)
    }

    /// `self · bᵀ` without materializing the transpose.
    pub fn matmul_bt(&self, b: &Self) -> Result<Self> {
        if self.cols != b.cols {
            return Err(Error::DimMismatch {
                op: "matmul_bt",
                left: self.shape(),
                right: b.shape(),
            });
        }
        let (n, p) = (self.rows, b.rows);
        let mut out = Vec::with_capacity(n * p);
        for i in 0..n {
            let a = self.row(i);
            for j in 0..p {
                out.push(dot(a, b.row(j)));
            }
        }
        Ok(Self::from_raw(n, p, out))
    }

    /// `selfᵀ · b` without materializing the transpose.
    pub fn matmul_at(&self, b: &Self) -> Result<Self> {
        if self.rows != b.rows {
            return Err(Error::DimMismatch {
                op: "matmul_at",
                left: self.shape(),
                right: b.shape(),
            });
        }
        let (m, p) = (self.cols, b.cols);
        let mut out = vec![T::zero(); m * p];
        for k in 0..self.rows {
            let arow = self.row(k);
            let brow = b.row(k);
            for (i, &a) in arow.iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let orow = &mut out[i * p..(i + 1) * p];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += a * bv;
                }
            }
        }
        Ok(Self::from_raw(m, p, out))
    }

    fn check_same(&self, b: &Self, op: &'static str) -> Result<()> {
        if self.shape() != b.shape() {
            return Err(Error::DimMismatch {
                op,
                left: self.shape(),
                right: b.shape(),
            });
        }
        Ok(())
    }

    pub fn add(&self, b: &Self) -> Result<Self> {
        self.check_same(b, "add")?;
        Ok(self.zip_map(b, |x, y| x + y))
    }

    pub fn sub(&self, b: &Self) -> Result<Self> {
        self.check_same(b, "sub")?;
        Ok(self.zip_map(b, |x, y| x - y))
    }

    pub fn hadamard(&self, b: &Self) -> Result<Self> {
        self.check_same(b, "hadamard")?;
        Ok(self.zip_map(b, |x, y| x * y))
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_raw(self.rows, self.cols, self.data.iter().map(|&x| f(x)).collect())
    }

    pub(crate) fn zip_map(&self, b: &Self, f: impl Fn(T, T) -> T) -> Self {
        Self::from_raw(
            self.rows,
            self.cols,
            self.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    pub fn add_assign(&mut self, b: &Self) {
        debug_assert_eq!(self.shape(), b.shape());
        for (x, &y) in self.data.iter_mut().zip(&b.data) {
            *x += y;
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, b: &Self) -> Result<T> {
        self.check_same(b, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&b.data)
            .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs())))
    }

    pub fn frobenius(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> T {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j).abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self::from_raw(
            end - start,
            self.cols,
            self.data[start * self.cols..end * self.cols].to_vec(),
        )
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Self {
        Self::from_fn(self.rows, end - start, |i, j| self.get(i, start + j))
    }

    /// Appends zero rows up to `rows`.
    pub fn pad_rows(&self, rows: usize) -> Self {
        let mut data = self.data.clone();
        data.resize(rows.max(self.rows) * self.cols, T::zero());
        Self::from_raw(rows.max(self.rows), self.cols, data)
    }

    pub fn vstack(parts: &[&Self]) -> Result<Self> {
        let cols = parts.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::DimMismatch {
                    op: "vstack",
                    left: (rows, cols),
                    right: p.shape(),
                });
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Self::from_raw(rows, cols, data))
    }

    pub fn hstack(parts: &[&Self]) -> Result<Self> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if let Some(p) = parts.iter().find(|p| p.rows != rows) {
            return Err(Error::DimMismatch {
                op: "hstack",
                left: (rows, 0),
                right: p.shape(),
            });
        }
        let cols: usize = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Self::from_raw(rows, cols, data))
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        )
    }
}

impl<T: fmt::Debug> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows.min(8) {
            let row: Vec<String> = self.data[i * self.cols..(i + 1) * self.cols]
                .iter()
                .take(8)
                .map(|x| format!("{x:?}"))
                .collect();
            writeln!(f, "  {}", row.join(", "))?;
        }
        write!(f, "]")
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        Matrix::from_fn(a.rows(), b.cols(), |i, j| {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            s
        })
    }

    #[test]
    fn identity_product() {
        let m = Matrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64 - 2.5);
        assert_eq!(Matrix::identity(3).matmul(&m).unwrap(), m);
    }

    #[test]
    fn small_product_by_hand() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn random_product_matches_triple_loop() {
        let mut rng = crate::Rng::new(3);
        let a = rng.gaussian_matrix::<f64>(7, 5, 1.0);
        let b = rng.gaussian_matrix::<f64>(5, 3, 1.0);
        let got = a.matmul(&b).unwrap();
        assert!(got.max_abs_diff(&naive(&a, &b)).unwrap() < 1e-12);
        assert!(a.matmul_bt(&b.transpose()).unwrap().max_abs_diff(&got).unwrap() < 1e-12);
        assert!(a.transpose().matmul_at(&b).unwrap().max_abs_diff(&got).unwrap() < 1e-12);
    }

    #[test]
    fn mismatch_is_error() {
        let a = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(a.matmul(&a), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn rejects_nan_input() {
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![1.0]).is_err());
    }
}
