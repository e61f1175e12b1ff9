//! Small dense and sparse linear algebra kernels.
//!
//! Problem sizes in this crate are modest (grids of at most a few hundred
//! variables), so dense factorizations are used for every solve and sparse
//! storage is only used for the constraint and design matrices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} = {value})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("zero pivot at {0} in LDL^T factorization")]
    ZeroPivot(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> SparseMatrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_ptr: vec![0; nrows + 1],
            col_idx: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed,
    /// explicit zeros are dropped.
    ///
    /// Panics if a triplet lies outside the declared shape.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut sorted: Vec<(usize, usize, T)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
        }
        sorted.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<T> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        let mut rows_of: Vec<usize> = Vec::with_capacity(sorted.len());
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                let k = values.len() - 1;
                values[k] = values[k] + v;
            } else {
                col_idx.push(c);
                values.push(v);
                rows_of.push(r);
                last = Some((r, c));
            }
        }
        // drop zeros produced by cancellation or given explicitly
        let mut keep_cols = Vec::with_capacity(col_idx.len());
        let mut keep_vals = Vec::with_capacity(values.len());
        for ((c, v), r) in col_idx.into_iter().zip(values).zip(rows_of) {
            if v != T::zero() {
                keep_cols.push(c);
                keep_vals.push(v);
                row_ptr[r + 1] += 1;
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx: keep_cols,
            values: keep_vals,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzeros of one row as `(col, value)` pairs.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_ptr[r + 1] - self.row_ptr[r]
    }

    pub fn triplets(&self) -> Vec<(usize, usize, T)> {
        (0..self.nrows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.row(r)
            .find(|&(cc, _)| cc == c)
            .map(|(_, v)| v)
            .unwrap_or_else(T::zero)
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| self.row(r).fold(T::zero(), |acc, (c, v)| acc + v * x[c]))
            .collect()
    }

    /// `y = A^T x`
    pub fn mul_t_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![T::zero(); self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            if xr == T::zero() {
                continue;
            }
            for (c, v) in self.row(r) {
                y[c] = y[c] + v * xr;
            }
        }
        y
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.ncols);
        let mut t = self.triplets();
        t.extend(other.triplets().into_iter().map(|(r, c, v)| (r + self.nrows, c, v)));
        Self::from_triplets(self.nrows + other.nrows, self.ncols, &t)
    }

    /// Selects a subset of rows in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut t = Vec::new();
        for (new_r, &r) in rows.iter().enumerate() {
            t.extend(self.row(r).map(|(c, v)| (new_r, c, v)));
        }
        Self::from_triplets(rows.len(), self.ncols, &t)
    }

    /// `A^T diag(w) A` as a dense matrix.
    pub fn gram_weighted(&self, weights: &[T]) -> DenseMatrix<T> {
        assert_eq!(weights.len(), self.nrows);
        let mut g = DenseMatrix::zeros(self.ncols, self.ncols);
        for r in 0..self.nrows {
            let w = weights[r];
            let entries: Vec<(usize, T)> = self.row(r).collect();
            for &(ci, vi) in &entries {
                for &(cj, vj) in &entries {
                    g.add_to(ci, cj, w * vi * vj);
                }
            }
        }
        g
    }

    /// `A^T A` as a dense matrix.
    pub fn gram(&self) -> DenseMatrix<T> {
        self.gram_weighted(&vec![T::one(); self.nrows])
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut d = DenseMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            d.set(r, c, v);
        }
        d
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix<T> {
    nrows: usize,
    ncols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![T::zero(); nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            assert_eq!(r.len(), ncols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { nrows, ncols, data }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.ncols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.ncols + c] = v;
    }

    #[inline]
    pub fn add_to(&mut self, r: usize, c: usize, v: T) {
        let k = r * self.ncols + c;
        self.data[k] = self.data[k] + v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.ncols..(r + 1) * self.ncols]
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| crate::scalar::dot(self.row(r), x))
            .collect()
    }

    pub fn scaled(&self, k: T) -> Self {
        Self {
            nrows: self.nrows,
            ncols: self.ncols,
            data: self.data.iter().map(|&v| v * k).collect(),
        }
    }

    /// `self + k * other`
    pub fn add_scaled(&self, other: &Self, k: T) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        Self {
            nrows: self.nrows,
            ncols: self.ncols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + k * b)
                .collect(),
        }
    }

    pub fn add_diagonal(&mut self, d: T) {
        for i in 0..self.nrows.min(self.ncols) {
            self.add_to(i, i, d);
        }
    }

    /// `x^T A x`
    pub fn quad_form(&self, x: &[T]) -> T {
        crate::scalar::dot(x, &self.mul_vec(x))
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry magnitude.
    pub fn asymmetry(&self) -> T {
        if self.nrows != self.ncols {
            return T::infinity();
        }
        let scale = self
            .data
            .iter()
            .fold(T::zero(), |acc, v| acc.max(v.abs()))
            .max(T::min_positive_value());
        let mut worst = T::zero();
        for i in 0..self.nrows {
            for j in (i + 1)..self.ncols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst / scale
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
    }
}

/// Cholesky factor `L` of a symmetric positive-definite matrix, `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    n: usize,
    l: Vec<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn factor(a: &DenseMatrix<T>) -> Result<Self, LinalgError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LinalgError::Dimension {
                expected: n,
                got: a.ncols(),
            });
        }
        let mut l = vec![T::zero(); n * n];
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d = d - l[j * n + k] * l[j * n + k];
            }
            if !(d > T::zero()) {
                return Err(LinalgError::NotPositiveDefinite {
                    pivot: j,
                    value: d.as_f64(),
                });
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s = s - l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / d;
            }
        }
        Ok(Self { n, l })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s = s - self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }
}

/// `A = L D L^T` without pivoting; valid for quasi-definite matrices.
#[derive(Debug, Clone)]
pub struct Ldl<T> {
    n: usize,
    l: Vec<T>,
    d: Vec<T>,
}

impl<T: Scalar> Ldl<T> {
    pub fn factor(a: &DenseMatrix<T>) -> Result<Self, LinalgError> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(LinalgError::Dimension {
                expected: n,
                got: a.ncols(),
            });
        }
        let mut l = vec![T::zero(); n * n];
        let mut d = vec![T::zero(); n];
        for j in 0..n {
            let mut dj = a.get(j, j);
            for k in 0..j {
                dj = dj - l[j * n + k] * l[j * n + k] * d[k];
            }
            if dj == T::zero() || !dj.is_finite() {
                return Err(LinalgError::ZeroPivot(j));
            }
            d[j] = dj;
            l[j * n + j] = T::one();
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s = s - l[i * n + k] * l[j * n + k] * d[k];
                }
                l[i * n + j] = s / dj;
            }
        }
        Ok(Self { n, l, d })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - self.l[i * n + k] * y[k];
            }
            y[i] = s;
        }
        for i in 0..n {
            y[i] = y[i] / self.d[i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s = s - self.l[k * n + i] * y[k];
            }
            y[i] = s;
        }
        y
    }
}

/// Outcome of a dense least-squares solve.
#[derive(Debug, Clone, PartialEq)]
pub enum LeastSquares<T> {
    Solved(Vec<T>),
    /// Columns whose component orthogonal to the preceding columns vanished.
    RankDeficient(Vec<usize>),
}

/// Minimizes `||X b - y||` for a tall `X` given by columns, using modified
/// Gram-Schmidt QR. A column is declared dependent when its orthogonal
/// residual falls below `rel_tol` times its original norm.
pub fn least_squares<T: Scalar>(columns: &[Vec<T>], y: &[T], rel_tol: T) -> LeastSquares<T> {
    let p = columns.len();
    let m = y.len();
    let mut q: Vec<Vec<T>> = Vec::with_capacity(p);
    let mut r = vec![vec![T::zero(); p]; p];
    let mut dependent = Vec::new();
    for (k, col) in columns.iter().enumerate() {
        assert_eq!(col.len(), m);
        let orig = crate::scalar::dot(col, col).sqrt();
        let mut v = col.clone();
        for (i, qi) in q.iter().enumerate() {
            let c = crate::scalar::dot(qi, &v);
            r[i][k] = c;
            for (vj, qj) in v.iter_mut().zip(qi) {
                *vj = *vj - c * *qj;
            }
        }
        let nv = crate::scalar::dot(&v, &v).sqrt();
        if nv <= rel_tol * orig || nv == T::zero() {
            dependent.push(k);
            q.push(vec![T::zero(); m]);
            continue;
        }
        r[k][k] = nv;
        q.push(v.into_iter().map(|x| x / nv).collect());
    }
    if !dependent.is_empty() {
        return LeastSquares::RankDeficient(dependent);
    }
    let qty: Vec<T> = q.iter().map(|qi| crate::scalar::dot(qi, y)).collect();
    let mut b = vec![T::zero(); p];
    for i in (0..p).rev() {
        let mut s = qty[i];
        for j in (i + 1)..p {
            s = s - r[i][j] * b[j];
        }
        b[i] = s / r[i][i];
    }
    LeastSquares::Solved(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn triplets_sum_duplicates_and_drop_zeros() {
        let m = SparseMatrix::from_triplets(2, 3, &[(0, 1, 1.0), (0, 1, 2.0), (1, 2, 0.0), (1, 0, -1.0)]);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![3.0, -1.0]);
        assert_eq!(m.mul_t_vec(&[1.0, 2.0]), vec![-2.0, 3.0, 0.0]);
    }

    #[test]
    fn cholesky_and_ldl_solve() {
        let a = DenseMatrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]);
        let x = Cholesky::factor(&a).unwrap().solve(&[1.0, 2.0]);
        assert_abs_diff_eq!(x[0], 1.0 / 11.0, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], 7.0 / 11.0, epsilon = 1e-14);

        // quasi-definite [[2, 1], [1, -1]]
        let k = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, -1.0]]);
        let z = Ldl::factor(&k).unwrap().solve(&[3.0, 0.0]);
        assert_abs_diff_eq!(z[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(z[1], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        assert!(matches!(
            Cholesky::factor(&a),
            Err(LinalgError::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn least_squares_detects_dependent_columns() {
        let ones = vec![1.0; 4];
        let x = vec![1.0, 2.0, 3.0, 4.0];
        let twice = vec![2.0, 4.0, 6.0, 8.0];
        let y = vec![3.0, 5.0, 7.0, 9.0];
        match least_squares(&[ones.clone(), x.clone()], &y, 1e-10) {
            LeastSquares::Solved(b) => {
                assert_abs_diff_eq!(b[0], 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(b[1], 2.0, epsilon = 1e-12);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(
            least_squares(&[ones, x, twice], &y, 1e-10),
            LeastSquares::RankDeficient(vec![2])
        );
    }

    #[test]
    fn gram_matches_dense() {
        let m = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (0, 1, 2.0), (1, 1, 3.0)]);
        let g = m.gram();
        assert_eq!(g, DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 13.0]]));
    }
}
