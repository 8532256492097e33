//! Dense row-major and compressed-row sparse matrices, plus the small set of
//! factorizations (SVD, pseudoinverse, truncation) the solvers are built on.
//!
//! All SVDs run on dense storage. Sparse operands are densified first; every
//! factorization in the pipelines acts on a matrix with at least one small
//! dimension, so the sparse payoff lives in the sketch kernels instead.

use std::borrow::Cow;
use std::ops::{Index, IndexMut};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Relative threshold below which singular values count as zero.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major entries, rejecting NaN and infinities.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "expected {} entries for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols.max(1),
                col: pos % cols.max(1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::dim("from_rows", (i, row.len()), (i, cols)));
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(rows.len(), cols, data)
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
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Panics if `f` produces a non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let v = f(i, j);
                assert!(v.is_finite(), "non-finite entry at ({i}, {j})");
                data.push(v);
            }
        }
        Self { rows, cols, data }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
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

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn nnz(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Columns `start..end` as a new matrix.
    pub fn column_range(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.cols);
        let width = end - start;
        let mut data = Vec::with_capacity(self.rows * width);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Self {
            rows: self.rows,
            cols: width,
            data,
        }
    }

    /// Rows `start..end` as a new matrix.
    pub fn row_range(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.rows);
        Self {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn select_columns(&self, idx: &[usize]) -> Self {
        Self::from_fn(self.rows, idx.len(), |i, j| self[(i, idx[j])])
    }

    pub fn hstack(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::dim("hstack", self.shape(), other.shape()));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Self {
            rows: self.rows,
            cols,
            data,
        })
    }

    pub fn vstack(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::dim("vstack", self.shape(), other.shape()));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::dim(op, self.shape(), other.shape()));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    /// `self * other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::dim("matmul", self.shape(), other.shape()));
        }
        Ok(gemm(
            (self.rows, self.cols, self.cols as isize, 1),
            other.cols,
            &self.data,
            (other.cols as isize, 1),
            &other.data,
        ))
    }

    /// `self^T * other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::dim("t_matmul", self.shape(), other.shape()));
        }
        Ok(gemm(
            (self.cols, self.rows, 1, self.cols as isize),
            other.cols,
            &self.data,
            (other.cols as isize, 1),
            &other.data,
        ))
    }

    /// `self * other^T` without materializing the transpose.
    pub fn matmul_t(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::dim("matmul_t", self.shape(), other.shape()));
        }
        Ok(gemm(
            (self.rows, self.cols, self.cols as isize, 1),
            other.rows,
            &self.data,
            (1, other.cols as isize),
            &other.data,
        ))
    }

    /// Scales column `j` by `weights[j]`.
    pub fn scale_columns(&self, weights: &[f64]) -> Self {
        assert_eq!(weights.len(), self.cols);
        Self::from_fn(self.rows, self.cols, |i, j| self[(i, j)] * weights[j])
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    pub fn from_nalgebra(m: &DMatrix<f64>) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
    }
}

/// Row-major gemm: `(m x k, row stride, col stride) * (k x n)`.
fn gemm(
    (m, k, rsa, csa): (usize, usize, isize, isize),
    n: usize,
    a: &[f64],
    (rsb, csb): (isize, isize),
    b: &[f64],
) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    // SAFETY: the strides describe in-bounds views of `a` (m x k) and `b` (k x n),
    // and `out` is a freshly allocated, contiguous m x n row-major buffer.
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
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

/// Compressed sparse row storage.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_csr(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if indptr.len() != rows + 1 {
            return Err(Error::InvalidSparse(format!(
                "row pointer has length {}, expected {}",
                indptr.len(),
                rows + 1
            )));
        }
        if indptr[0] != 0 || indptr.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidSparse("row pointer must start at 0 and be nondecreasing".into()));
        }
        let nnz = indptr[rows];
        if indices.len() != nnz || values.len() != nnz {
            return Err(Error::InvalidSparse(format!(
                "nnz is {nnz} but {} indices and {} values were given",
                indices.len(),
                values.len()
            )));
        }
        for i in 0..rows {
            let cols_in_row = &indices[indptr[i]..indptr[i + 1]];
            if cols_in_row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidSparse(format!("column indices in row {i} not strictly increasing")));
            }
            if let Some(&c) = cols_in_row.last() {
                if c >= cols {
                    return Err(Error::InvalidSparse(format!("column index {c} out of range in row {i}")));
                }
            }
            for (k, v) in values[indptr[i]..indptr[i + 1]].iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        row: i,
                        col: cols_in_row[k],
                    });
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// Builds from (row, col, value) triplets; duplicates are summed and zeros dropped.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(i, j, _) in &sorted {
            if i >= rows || j >= cols {
                return Err(Error::InvalidSparse(format!("triplet ({i}, {j}) outside {rows}x{cols}")));
            }
        }
        sorted.sort_by_key(|&(i, j, _)| (i, j));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().expect("duplicate follows an entry") += v;
            } else {
                indices.push(j);
                values.push(v);
                indptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..rows {
            indptr[i + 1] += indptr[i];
        }
        let m = Self::from_csr(rows, cols, indptr, indices, values)?;
        Ok(m.pruned())
    }

    pub fn from_dense(d: &DenseMatrix) -> Self {
        let mut indptr = Vec::with_capacity(d.rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..d.rows {
            for (j, &v) in d.row(i).iter().enumerate() {
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows: d.rows,
            cols: d.cols,
            indptr,
            indices,
            values,
        }
    }

    fn pruned(self) -> Self {
        if self.values.iter().all(|v| *v != 0.0) {
            return self;
        }
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            indptr,
            indices,
            values,
            ..self
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

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                out[(i, j)] = v;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for j in 0..self.cols {
            counts[j + 1] += counts[j];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.rows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let slot = next[j];
                indices[slot] = i;
                values[slot] = v;
                next[j] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            indptr,
            indices,
            values,
        }
    }

    pub fn hstack(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::dim("hstack", self.shape(), other.shape()));
        }
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::with_capacity(self.nnz() + other.nnz());
        let mut values = Vec::with_capacity(self.nnz() + other.nnz());
        indptr.push(0);
        for i in 0..self.rows {
            let (c1, v1) = self.row(i);
            indices.extend_from_slice(c1);
            values.extend_from_slice(v1);
            let (c2, v2) = other.row(i);
            indices.extend(c2.iter().map(|j| j + self.cols));
            values.extend_from_slice(v2);
            indptr.push(indices.len());
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols + other.cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Either storage form; the operand type of the sketching pipelines.
#[derive(Clone, Debug, PartialEq)]
pub enum Matrix {
    Dense(DenseMatrix),
    Sparse(SparseMatrix),
}

impl Matrix {
    pub fn rows(&self) -> usize {
        match self {
            Matrix::Dense(d) => d.rows(),
            Matrix::Sparse(s) => s.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Matrix::Dense(d) => d.cols(),
            Matrix::Sparse(s) => s.cols(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn nnz(&self) -> usize {
        match self {
            Matrix::Dense(d) => d.nnz(),
            Matrix::Sparse(s) => s.nnz(),
        }
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, Matrix::Sparse(_))
    }

    pub fn to_dense(&self) -> Cow<'_, DenseMatrix> {
        match self {
            Matrix::Dense(d) => Cow::Borrowed(d),
            Matrix::Sparse(s) => Cow::Owned(s.to_dense()),
        }
    }

    /// Visits the nonzero entries of row `i` in column order.
    #[inline]
    pub fn for_each_in_row(&self, i: usize, mut f: impl FnMut(usize, f64)) {
        match self {
            Matrix::Dense(d) => {
                for (j, &v) in d.row(i).iter().enumerate() {
                    if v != 0.0 {
                        f(j, v);
                    }
                }
            }
            Matrix::Sparse(s) => {
                let (cols, vals) = s.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    f(j, v);
                }
            }
        }
    }

    /// Horizontal concatenation `[self, other]`; sparse only when both are.
    pub fn hstack(&self, other: &Matrix) -> Result<Matrix> {
        match (self, other) {
            (Matrix::Sparse(a), Matrix::Sparse(b)) => Ok(Matrix::Sparse(a.hstack(b)?)),
            _ => Ok(Matrix::Dense(self.to_dense().hstack(&other.to_dense())?)),
        }
    }

    pub fn transpose(&self) -> Matrix {
        match self {
            Matrix::Dense(d) => Matrix::Dense(d.transpose()),
            Matrix::Sparse(s) => Matrix::Sparse(s.transpose()),
        }
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        match self {
            Matrix::Dense(d) => d.frobenius_norm_sq(),
            Matrix::Sparse(s) => s.frobenius_norm_sq(),
        }
    }

    /// Columns `start..end`, keeping the storage form.
    pub fn column_range(&self, start: usize, end: usize) -> Matrix {
        match self {
            Matrix::Dense(d) => Matrix::Dense(d.column_range(start, end)),
            Matrix::Sparse(s) => {
                let mut trip = Vec::new();
                for i in 0..s.rows() {
                    let (cols, vals) = s.row(i);
                    for (&j, &v) in cols.iter().zip(vals) {
                        if (start..end).contains(&j) {
                            trip.push((i, j - start, v));
                        }
                    }
                }
                Matrix::Sparse(
                    SparseMatrix::from_triplets(s.rows(), end - start, &trip)
                        .expect("sub-block of a valid sparse matrix is valid"),
                )
            }
        }
    }

    /// Dense product of rows `start..end` of `self` with `rhs`.
    pub fn rows_matmul_dense(&self, start: usize, end: usize, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols() != rhs.rows() {
            return Err(Error::dim("rows_matmul_dense", self.shape(), rhs.shape()));
        }
        match self {
            Matrix::Dense(d) => d.row_range(start, end).matmul(rhs),
            Matrix::Sparse(_) => {
                let mut out = DenseMatrix::zeros(end - start, rhs.cols());
                for i in start..end {
                    let out_row = out.row_mut(i - start);
                    self.for_each_in_row(i, |k, v| {
                        for (o, r) in out_row.iter_mut().zip(rhs.row(k)) {
                            *o += v * r;
                        }
                    });
                }
                Ok(out)
            }
        }
    }

    /// Dense product `self * rhs`, in time proportional to `nnz(self) * rhs.cols()`.
    pub fn matmul_dense(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols() != rhs.rows() {
            return Err(Error::dim("matmul_dense", self.shape(), rhs.shape()));
        }
        match self {
            Matrix::Dense(d) => d.matmul(rhs),
            Matrix::Sparse(s) => {
                let mut out = DenseMatrix::zeros(s.rows(), rhs.cols());
                for i in 0..s.rows() {
                    let (cols, vals) = s.row(i);
                    let out_row = out.row_mut(i);
                    for (&k, &v) in cols.iter().zip(vals) {
                        for (o, r) in out_row.iter_mut().zip(rhs.row(k)) {
                            *o += v * r;
                        }
                    }
                }
                Ok(out)
            }
        }
    }
}

impl From<DenseMatrix> for Matrix {
    fn from(d: DenseMatrix) -> Self {
        Matrix::Dense(d)
    }
}

impl From<SparseMatrix> for Matrix {
    fn from(s: SparseMatrix) -> Self {
        Matrix::Sparse(s)
    }
}

/// Anything that can present itself as a dense matrix for factorization.
pub trait MatrixView {
    fn dense(&self) -> Cow<'_, DenseMatrix>;
}

impl MatrixView for DenseMatrix {
    fn dense(&self) -> Cow<'_, DenseMatrix> {
        Cow::Borrowed(self)
    }
}

impl MatrixView for SparseMatrix {
    fn dense(&self) -> Cow<'_, DenseMatrix> {
        Cow::Owned(self.to_dense())
    }
}

impl MatrixView for Matrix {
    fn dense(&self) -> Cow<'_, DenseMatrix> {
        self.to_dense()
    }
}

/// Thin SVD `M = U diag(s) V^T` with singular values sorted nonincreasing.
#[derive(Clone, Debug)]
pub struct SvdFactors {
    pub u: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub v: DenseMatrix,
}

impl SvdFactors {
    /// Count of singular values above `rel_tol * sigma_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let smax = self.singular_values.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return 0;
        }
        self.singular_values.iter().take_while(|&&s| s > rel_tol * smax).count()
    }

    /// `U_k diag(s_k) V_k^T` for the leading `k` triples.
    pub fn reconstruct(&self, k: usize) -> DenseMatrix {
        let k = k.min(self.singular_values.len());
        let us = self.u.column_range(0, k).scale_columns(&self.singular_values[..k]);
        us.matmul_t(&self.v.column_range(0, k))
            .expect("factor shapes agree")
    }

    /// Leading `k` left singular vectors.
    pub fn u_k(&self, k: usize) -> DenseMatrix {
        self.u.column_range(0, k)
    }

    /// Leading `k` right singular vectors.
    pub fn v_k(&self, k: usize) -> DenseMatrix {
        self.v.column_range(0, k)
    }
}

fn svd_iteration_cap(rows: usize, cols: usize) -> usize {
    1000 + 200 * rows.min(cols)
}

pub fn svd<M: MatrixView + ?Sized>(m: &M) -> Result<SvdFactors> {
    let d = m.dense();
    let (rows, cols) = d.shape();
    let r = rows.min(cols);
    if r == 0 {
        return Ok(SvdFactors {
            u: DenseMatrix::zeros(rows, 0),
            singular_values: Vec::new(),
            v: DenseMatrix::zeros(cols, 0),
        });
    }
    let fail = || Error::Factorization { rows, cols };

    // Tall inputs go through a QR first; the bidiagonal sweep then runs on a square R.
    let (u_na, s_na, vt_na) = if rows >= 2 * cols {
        let qr = d.to_nalgebra().qr();
        let q = qr.q();
        let rr = qr.r();
        let svd = rr
            .try_svd(true, true, f64::EPSILON, svd_iteration_cap(cols, cols))
            .ok_or_else(fail)?;
        let u = q * svd.u.ok_or_else(fail)?;
        (u, svd.singular_values, svd.v_t.ok_or_else(fail)?)
    } else {
        let svd = d
            .to_nalgebra()
            .try_svd(true, true, f64::EPSILON, svd_iteration_cap(rows, cols))
            .ok_or_else(fail)?;
        (svd.u.ok_or_else(fail)?, svd.singular_values, svd.v_t.ok_or_else(fail)?)
    };

    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| s_na[b].total_cmp(&s_na[a]));
    let singular_values = order.iter().map(|&i| s_na[i].max(0.0)).collect();
    let u = DenseMatrix::from_fn(rows, r, |i, j| u_na[(i, order[j])]);
    let v = DenseMatrix::from_fn(cols, r, |i, j| vt_na[(order[j], i)]);
    Ok(SvdFactors {
        u,
        singular_values,
        v,
    })
}

/// Moore-Penrose pseudoinverse; singular values at or below `rank_tol * sigma_max` are dropped.
pub fn pseudoinverse<M: MatrixView + ?Sized>(m: &M, rank_tol: f64) -> Result<DenseMatrix> {
    if !(rank_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("rank_tol must be positive, got {rank_tol}")));
    }
    let f = svd(m)?;
    Ok(pinv_from_svd(&f, rank_tol))
}

pub(crate) fn pinv_from_svd(f: &SvdFactors, rank_tol: f64) -> DenseMatrix {
    let k = f.rank(rank_tol);
    let inv: Vec<f64> = f.singular_values[..k].iter().map(|s| 1.0 / s).collect();
    f.v_k(k)
        .scale_columns(&inv)
        .matmul_t(&f.u_k(k))
        .expect("factor shapes agree")
}

/// Best rank-`k` approximation in Frobenius norm. `k` beyond the smaller dimension is clamped.
pub fn best_rank_k<M: MatrixView + ?Sized>(m: &M, k: usize) -> Result<DenseMatrix> {
    Ok(svd(m)?.reconstruct(k))
}

pub fn frobenius_distance<M: MatrixView + ?Sized, N: MatrixView + ?Sized>(m: &M, n: &N) -> Result<f64> {
    let (a, b) = (m.dense(), n.dense());
    if a.shape() != b.shape() {
        return Err(Error::dim("frobenius_distance", a.shape(), b.shape()));
    }
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Orthonormal basis (as columns) of the column span, to relative tolerance `rank_tol`.
pub fn column_basis<M: MatrixView + ?Sized>(m: &M, rank_tol: f64) -> Result<DenseMatrix> {
    let f = svd(m)?;
    let k = f.rank(rank_tol);
    Ok(f.u_k(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn orthonormality_error(q: &DenseMatrix) -> f64 {
        let g = q.t_matmul(q).unwrap();
        g.sub(&DenseMatrix::identity(q.cols())).unwrap().max_abs()
    }

    #[test]
    fn rejects_non_finite_entries() {
        let err = DenseMatrix::from_row_major(2, 2, vec![1.0, f64::NAN, 0.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 0, col: 1 }));
        assert!(DenseMatrix::from_row_major(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn sparse_structure_is_validated() {
        assert!(SparseMatrix::from_csr(2, 3, vec![0, 1, 2], vec![0, 3], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(2, 3, vec![0, 2, 1], vec![0, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(1, 3, vec![0, 2], vec![1, 1], vec![1.0, 1.0]).is_err());
        assert!(SparseMatrix::from_csr(1, 3, vec![0, 2], vec![0, 2], vec![1.0, 1.0]).is_ok());
    }

    #[test]
    fn triplets_sum_duplicates() {
        let s = SparseMatrix::from_triplets(2, 2, &[(1, 1, 2.0), (0, 0, 1.0), (1, 1, 3.0), (0, 1, 0.0)]).unwrap();
        assert_eq!(s.nnz(), 2);
        assert_eq!(s.to_dense(), DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 5.0]]).unwrap());
        assert_eq!(s.transpose().transpose(), s);
    }

    #[test]
    fn products_match_naive_loops() {
        let a = random(5, 3, 1);
        let b = random(3, 4, 2);
        let c = a.matmul(&b).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                let naive: f64 = (0..3).map(|k| a[(i, k)] * b[(k, j)]).sum();
                assert!((c[(i, j)] - naive).abs() < 1e-14);
            }
        }
        let at_b = a.t_matmul(&random(5, 2, 3)).unwrap();
        let naive = a.transpose().matmul(&random(5, 2, 3)).unwrap();
        assert!(at_b.sub(&naive).unwrap().max_abs() < 1e-14);
        let a_bt = a.matmul_t(&random(4, 3, 4)).unwrap();
        let naive = a.matmul(&random(4, 3, 4).transpose()).unwrap();
        assert!(a_bt.sub(&naive).unwrap().max_abs() < 1e-14);
        let sparse = Matrix::Sparse(SparseMatrix::from_dense(&a));
        assert!(sparse.matmul_dense(&b).unwrap().sub(&c).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn svd_of_diagonal() {
        let f = svd(&DenseMatrix::from_diag(&[3.0, 1.0, 1.0])).unwrap();
        for (s, e) in f.singular_values.iter().zip([3.0, 1.0, 1.0]) {
            assert!((s - e).abs() < 1e-14);
        }
        let f = svd(&DenseMatrix::from_diag(&[1.0, 1.0, 3.0])).unwrap();
        assert!((f.singular_values[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn svd_of_zero_matrix() {
        let f = svd(&DenseMatrix::zeros(2, 2)).unwrap();
        assert_eq!(f.singular_values, vec![0.0, 0.0]);
        assert!(orthonormality_error(&f.u) < 1e-12);
        assert!(orthonormality_error(&f.v) < 1e-12);
    }

    #[test]
    fn svd_reconstructs_random_shapes() {
        for (seed, (r, c)) in [(5, 3), (3, 5), (40, 4), (4, 40), (7, 7), (1, 6)].into_iter().enumerate() {
            let m = random(r, c, seed as u64 + 10);
            let f = svd(&m).unwrap();
            let err = frobenius_distance(&f.reconstruct(r.min(c)), &m).unwrap();
            assert!(err <= 1e-8 * m.frobenius_norm().max(1.0), "shape {r}x{c}: {err}");
            assert!(orthonormality_error(&f.u) < 1e-10);
            assert!(orthonormality_error(&f.v) < 1e-10);
            assert!(f.singular_values.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn pseudoinverse_cases() {
        let i3 = DenseMatrix::identity(3);
        let p = pseudoinverse(&i3, DEFAULT_RANK_TOL).unwrap();
        assert!(p.sub(&i3).unwrap().max_abs() < 1e-14);

        let p = pseudoinverse(&DenseMatrix::from_diag(&[2.0, 0.0]), DEFAULT_RANK_TOL).unwrap();
        assert!(p.sub(&DenseMatrix::from_diag(&[0.5, 0.0])).unwrap().max_abs() < 1e-14);

        let m = random(4, 2, 7);
        let p = pseudoinverse(&m, DEFAULT_RANK_TOL).unwrap();
        assert!(p.matmul(&m).unwrap().sub(&DenseMatrix::identity(2)).unwrap().max_abs() < 1e-8);
        let mpm = m.matmul(&p).unwrap().matmul(&m).unwrap();
        assert!(frobenius_distance(&mpm, &m).unwrap() < 1e-8 * m.frobenius_norm());
        let pmp = p.matmul(&m).unwrap().matmul(&p).unwrap();
        assert!(frobenius_distance(&pmp, &p).unwrap() < 1e-8 * p.frobenius_norm());

        assert!(pseudoinverse(&m, 0.0).is_err());
    }

    #[test]
    fn best_rank_k_drops_the_tail() {
        let m = DenseMatrix::from_diag(&[1.0, 1.0, 3.0]);
        let r = best_rank_k(&m, 2).unwrap();
        assert!((frobenius_distance(&m, &r).unwrap() - 1.0).abs() < 1e-12);

        let m = random(6, 4, 11);
        let s = svd(&m).unwrap().singular_values;
        let r = best_rank_k(&m, 2).unwrap();
        let resid = frobenius_distance(&m, &r).unwrap().powi(2);
        let tail = s[2] * s[2] + s[3] * s[3];
        assert!((resid - tail).abs() <= 1e-8 * tail);

        let full = best_rank_k(&m, 4).unwrap();
        assert!(frobenius_distance(&full, &m).unwrap() < 1e-8);
        assert_eq!(best_rank_k(&m, 0).unwrap(), DenseMatrix::zeros(6, 4));
    }

    #[test]
    fn frobenius_distance_cases() {
        let a = DenseMatrix::from_diag(&[1.0, 1.0, 3.0]);
        let b = DenseMatrix::from_diag(&[1.0, 1.0, 0.0]);
        assert_eq!(frobenius_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(frobenius_distance(&a, &b).unwrap(), 3.0);
        assert!(frobenius_distance(&a, &DenseMatrix::zeros(2, 2)).is_err());

        let x = random(4, 5, 20);
        let y = random(4, 5, 21);
        let mut naive = 0.0;
        for i in 0..4 {
            for j in 0..5 {
                naive += (x[(i, j)] - y[(i, j)]).powi(2);
            }
        }
        assert!((frobenius_distance(&x, &y).unwrap() - naive.sqrt()).abs() < 1e-14);
        assert_eq!(frobenius_distance(&x, &y).unwrap(), frobenius_distance(&y, &x).unwrap());
    }

    #[test]
    fn sparse_and_dense_agree() {
        let mut d = random(8, 5, 30);
        for i in 0..8 {
            for j in 0..5 {
                if (i + j) % 3 != 0 {
                    d[(i, j)] = 0.0;
                }
            }
        }
        let s = SparseMatrix::from_dense(&d);
        assert_eq!(s.nnz(), d.nnz());
        let fs = svd(&s).unwrap();
        let fd = svd(&d).unwrap();
        for (a, b) in fs.singular_values.iter().zip(&fd.singular_values) {
            assert!((a - b).abs() <= 1e-12 * fd.singular_values[0]);
        }
        let ps = pseudoinverse(&s, DEFAULT_RANK_TOL).unwrap();
        let pd = pseudoinverse(&d, DEFAULT_RANK_TOL).unwrap();
        assert!(ps.sub(&pd).unwrap().max_abs() <= 1e-12 * pd.max_abs());
        let bs = best_rank_k(&s, 2).unwrap();
        let bd = best_rank_k(&d, 2).unwrap();
        assert!(bs.sub(&bd).unwrap().max_abs() <= 1e-12 * bd.max_abs());
        assert_eq!(frobenius_distance(&s, &d).unwrap(), 0.0);
        let ms = Matrix::Sparse(s.clone());
        assert_eq!(ms.hstack(&ms).unwrap().to_dense().into_owned(), d.hstack(&d).unwrap());
        assert_eq!(ms.column_range(1, 4).to_dense().into_owned(), d.column_range(1, 4));
    }
}
