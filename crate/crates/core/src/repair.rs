//! Column repair: makes `A X = B` solvable for a block matrix `[A, B]` whose
//! columns lie in a common low-dimensional span.
//!
//! Columns of `A` are scanned left to right. A column that lies in the span of
//! the others is nudged by `perturb` times the first unused column of `B` that
//! `A` does not span. Once `A` spans every column of `B`, `X` follows from
//! the triangular factor of an orthonormal basis of `A`.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

/// A column is dependent when its residual against the basis is at most this
/// fraction of its norm.
pub const DEPENDENCE_TOL: f64 = 1e-8;

/// Looser threshold for the final check that `B` lies in the span of the repaired `A`.
const CONSISTENCY_TOL: f64 = 1e-6;

/// A repaired column is independent by construction; its residual can be tiny
/// relative to its norm when the perturbation is small, so it only has to
/// clear rounding noise.
const REPAIRED_TOL: f64 = 1e-14;

#[derive(Clone, Debug)]
pub struct ColumnRepair {
    /// `A` after repair.
    pub a: DenseMatrix,
    /// `assignment[i] = Some(j)` when column `i` of `A` received `perturb * B[:, j]`.
    pub assignment: Vec<Option<usize>>,
    /// Columns of `A` that made it into the basis, in basis order.
    pub independent: Vec<usize>,
    pub perturb: f64,
    basis: Vec<Vec<f64>>,
    /// Upper-triangular coefficients of the independent columns in `basis`.
    coeffs: Vec<Vec<f64>>,
}

impl ColumnRepair {
    pub fn rank(&self) -> usize {
        self.independent.len()
    }

    /// An exact solution of `A X = B` for the repaired `A`: the basic solution
    /// supported on the independent columns.
    pub fn solve(&self, b: &DenseMatrix) -> Result<DenseMatrix> {
        if b.rows() != self.a.rows() {
            return Err(Error::dim("repair solve", self.a.shape(), b.shape()));
        }
        let r = self.rank();
        let n = self.a.cols();
        let mut x = DenseMatrix::zeros(n, b.cols());
        for j in 0..b.cols() {
            let col = b.column(j);
            let mut rhs: Vec<f64> = self.basis.iter().map(|q| dot(q, &col)).collect();
            // back substitution on the triangular coefficients
            for t in (0..r).rev() {
                let tail: f64 = (t + 1..r).map(|u| self.coeffs[u][t] * rhs[u]).sum();
                rhs[t] = (rhs[t] - tail) / self.coeffs[t][t];
            }
            for (t, &col_idx) in self.independent.iter().enumerate() {
                x[(col_idx, j)] = rhs[t];
            }
        }
        Ok(x)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Residual of `v` against the orthonormal `basis` (two Gram-Schmidt passes),
/// plus the projection coefficients.
fn orthogonalize(basis: &[Vec<f64>], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut res = v.to_vec();
    let mut coeffs = vec![0.0; basis.len()];
    for _ in 0..2 {
        for (c, q) in coeffs.iter_mut().zip(basis) {
            let h = dot(q, &res);
            *c += h;
            res.iter_mut().zip(q).for_each(|(r, qi)| *r -= h * qi);
        }
    }
    (res, coeffs)
}

fn is_independent(res: &[f64], v: &[f64], tol: f64) -> bool {
    let nv = norm(v);
    nv > 0.0 && norm(res) > tol * nv
}

/// Orthonormal basis of the given columns, scanned in order, with the
/// triangular coefficients and the indices that contributed.
struct Basis {
    q: Vec<Vec<f64>>,
    coeffs: Vec<Vec<f64>>,
    members: Vec<usize>,
}

impl Basis {
    fn new() -> Self {
        Basis { q: Vec::new(), coeffs: Vec::new(), members: Vec::new() }
    }

    fn build<'a>(cols: impl Iterator<Item = (usize, &'a [f64])>) -> Self {
        let mut basis = Basis::new();
        for (idx, col) in cols {
            basis.try_push(idx, col, DEPENDENCE_TOL);
        }
        basis
    }

    fn residual(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        orthogonalize(&self.q, v)
    }

    fn spans(&self, v: &[f64]) -> bool {
        !is_independent(&self.residual(v).0, v, DEPENDENCE_TOL)
    }

    fn try_push(&mut self, idx: usize, v: &[f64], tol: f64) -> bool {
        let (res, mut c) = self.residual(v);
        if !is_independent(&res, v, tol) {
            return false;
        }
        let rn = norm(&res);
        c.push(rn);
        self.q.push(res.into_iter().map(|x| x / rn).collect());
        self.coeffs.push(c);
        self.members.push(idx);
        true
    }
}

/// Repairs the columns of `a` with multiples of the columns of `b`.
///
/// Column `i` is repaired when it lies in the span of the other columns; it
/// receives `perturb * b[:, j]` for the smallest unused `j` whose column lies
/// outside the span of `a`. Fails with [`Error::IrreparableRank`] when some column of `b`
/// is still outside the span of the repaired `a`, which happens only when
/// `[a, b]` has more rank than `a` can absorb.
pub fn repair_columns(a: &DenseMatrix, b: &DenseMatrix, perturb: f64) -> Result<ColumnRepair> {
    if a.rows() != b.rows() {
        return Err(Error::dim("repair_columns", a.shape(), b.shape()));
    }
    if !(perturb > 0.0) || !perturb.is_finite() {
        return Err(Error::InvalidArgument(format!("perturbation must be positive, got {perturb}")));
    }
    let (n, d) = (a.cols(), b.cols());
    let b_cols: Vec<Vec<f64>> = (0..d).map(|j| b.column(j)).collect();
    let mut cols: Vec<Vec<f64>> = (0..n).map(|i| a.column(i)).collect();
    let mut assignment = vec![None; n];
    let mut used = vec![false; d];

    for i in 0..n {
        let others = Basis::build(
            cols.iter().enumerate().filter(|&(k, _)| k != i).map(|(k, c)| (k, c.as_slice())),
        );
        if !others.spans(&cols[i]) {
            continue;
        }
        // column i adds nothing, so span(A) = span(others)
        if let Some(j) = (0..d).find(|&j| !used[j] && !others.spans(&b_cols[j])) {
            used[j] = true;
            assignment[i] = Some(j);
            let cand: Vec<f64> = cols[i].iter().zip(&b_cols[j]).map(|(x, y)| x + perturb * y).collect();
            cols[i] = cand;
        }
    }

    let mut basis = Basis::build(
        cols.iter()
            .enumerate()
            .filter(|&(k, _)| assignment[k].is_none())
            .map(|(k, c)| (k, c.as_slice())),
    );
    for (k, c) in cols.iter().enumerate().filter(|&(k, _)| assignment[k].is_some()) {
        basis.try_push(k, c, REPAIRED_TOL);
    }
    let mut repaired = a.clone();
    for (i, c) in cols.iter().enumerate() {
        repaired.set_column(i, c);
    }
    let scale = cols.iter().map(|c| norm(c)).fold(0.0, f64::max);
    for (j, col) in b_cols.iter().enumerate() {
        let (res, _) = basis.residual(col);
        if norm(&res) > CONSISTENCY_TOL * norm(col).max(scale) {
            return Err(Error::IrreparableRank(format!(
                "column {j} of the response block is not spanned after repair (rank {} of {n})",
                basis.q.len()
            )));
        }
    }

    Ok(ColumnRepair {
        a: repaired,
        assignment,
        independent: basis.members,
        perturb,
        basis: basis.q,
        coeffs: basis.coeffs,
    })
}
