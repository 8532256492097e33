//! Ground-truth solvers: ordinary least squares and closed-form total least
//! squares from the SVD of `C = [A, B]`.
//!
//! The rank-n truncation of `C` always minimizes `‖C' - C‖_F`, but the
//! constrained program only has a solution when the discarded right singular
//! subspace has a nonsingular bottom block. Three cases follow: a unique
//! solution, a tie at `σ_n = σ_{n+1}` with several minimizers, and no solution,
//! where a perturbation of the truncation gets arbitrarily close instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{pinv_from_svd, svd, DenseMatrix, Matrix, DEFAULT_RANK_TOL};
use crate::rank_constrained::ridge_solve;
use crate::repair::{repair_columns, ColumnRepair};

/// Relative gap below which `σ_n` and `σ_{n+1}` count as tied, and below which
/// a bottom block counts as singular.
pub const SINGULARITY_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolutionCase {
    Unique,
    NonUnique,
    NoSolution,
}

impl SolutionCase {
    pub fn as_str(self) -> &'static str {
        match self {
            SolutionCase::Unique => "unique",
            SolutionCase::NonUnique => "non-unique",
            SolutionCase::NoSolution => "no-solution",
        }
    }
}

/// A perturbed solution for the no-solution case.
#[derive(Clone, Debug)]
pub struct RepairedSolution {
    pub x: DenseMatrix,
    /// The first `n` columns of the truncation after repair.
    pub a_hat: DenseMatrix,
    /// `‖[Â, ÂX] - C‖_F^2`.
    pub achieved_cost: f64,
    pub perturb_delta: f64,
    pub assignment: Vec<Option<usize>>,
}

#[derive(Clone, Debug)]
pub struct TlsSolution {
    /// Present for the unique and non-unique cases.
    pub x: Option<DenseMatrix>,
    /// A rank-n minimizer of `‖C' - C‖_F`.
    pub c_hat: DenseMatrix,
    /// `Σ_{i>n} σ_i(C)^2`, the squared optimal cost.
    pub cost: f64,
    pub case: SolutionCase,
    pub singular_values: Vec<f64>,
    /// Only in the no-solution case.
    pub repaired: Option<RepairedSolution>,
}

impl TlsSolution {
    /// The exact solution when one exists, otherwise the repaired one.
    pub fn best_x(&self) -> &DenseMatrix {
        match (&self.x, &self.repaired) {
            (Some(x), _) => x,
            (None, Some(r)) => &r.x,
            (None, None) => unreachable!("a TLS solution always carries an exact or repaired X"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LsSolution {
    pub x: DenseMatrix,
    /// `‖A X - B‖_F^2`.
    pub cost: f64,
}

/// `X = A^+ B` and its squared residual.
pub fn ls_solve(a: &Matrix, b: &Matrix) -> Result<LsSolution> {
    if a.rows() != b.rows() {
        return Err(Error::dim("ls_solve", a.shape(), b.shape()));
    }
    let a = a.to_dense();
    let b = b.to_dense();
    let x = ridge_solve(a.as_ref(), &b, 0.0)?;
    let cost = a.matmul(&x)?.sub(&b)?.frobenius_norm_sq();
    Ok(LsSolution { x, cost })
}

fn check_shapes(a: &Matrix, b: &Matrix) -> Result<()> {
    if a.rows() != b.rows() {
        return Err(Error::dim("tls", a.shape(), b.shape()));
    }
    if a.cols() == 0 || b.cols() == 0 {
        return Err(Error::Degenerate(format!(
            "total least squares needs n >= 1 and d >= 1, got n = {}, d = {}",
            a.cols(),
            b.cols()
        )));
    }
    Ok(())
}

/// `C = [A, B]` densified, padded with zero rows so its SVD has a square `V`.
fn stacked_padded(a: &Matrix, b: &Matrix) -> Result<(DenseMatrix, DenseMatrix)> {
    let c = a.to_dense().hstack(&b.to_dense())?;
    let padded = if c.rows() < c.cols() {
        c.vstack(&DenseMatrix::zeros(c.cols() - c.rows(), c.cols()))?
    } else {
        c.clone()
    };
    Ok((c, padded))
}

/// `Σ_{i>n} σ_i(C)^2` without forming a solution.
pub fn tls_cost(a: &Matrix, b: &Matrix) -> Result<f64> {
    check_shapes(a, b)?;
    let (_, padded) = stacked_padded(a, b)?;
    let s = svd(&padded)?.singular_values;
    Ok(s[a.cols()..].iter().map(|x| x * x).sum())
}

fn is_singular(m: &DenseMatrix) -> Result<bool> {
    let s = svd(m)?.singular_values;
    let smax = s.first().copied().unwrap_or(0.0);
    let smin = s.last().copied().unwrap_or(0.0);
    Ok(smax == 0.0 || smin < SINGULARITY_TOL * smax)
}

/// Solves for the discarded subspace `S` (columns, `N x d`): `X = -S_top S_bottom^{-1}`.
fn solution_from_subspace(s: &DenseMatrix, n: usize) -> Result<Option<DenseMatrix>> {
    let n_total = s.rows();
    let top = s.row_range(0, n);
    let bottom = s.row_range(n, n_total);
    let f = svd(&bottom)?;
    let smax = f.singular_values.first().copied().unwrap_or(0.0);
    let smin = f.singular_values.last().copied().unwrap_or(0.0);
    if smax == 0.0 || smin < SINGULARITY_TOL * smax {
        return Ok(None);
    }
    Ok(Some(top.matmul(&pinv_from_svd(&f, DEFAULT_RANK_TOL))?.scaled(-1.0)))
}

/// Closed-form total least squares with the three-case analysis.
///
/// In the no-solution case the rank-n truncation is repaired column by column
/// with `perturb_delta` multiples of its response block, so a usable `X` still
/// comes back in [`TlsSolution::repaired`].
pub fn tls_solve(a: &Matrix, b: &Matrix, perturb_delta: f64) -> Result<TlsSolution> {
    check_shapes(a, b)?;
    if !(perturb_delta > 0.0) {
        return Err(Error::InvalidArgument(format!("perturb_delta must be positive, got {perturb_delta}")));
    }
    let (n, d) = (a.cols(), b.cols());
    let n_total = n + d;
    let (c, padded) = stacked_padded(a, b)?;
    let f = svd(&padded)?;
    let sigma = f.singular_values.clone();
    let v = f.v;
    let cost: f64 = sigma[n..].iter().map(|x| x * x).sum();
    let tol = SINGULARITY_TOL * sigma[0];

    let remove = |basis: &DenseMatrix| -> Result<DenseMatrix> {
        // C - C S S^T
        let cs = c.matmul(basis)?;
        c.sub(&cs.matmul_t(basis)?)
    };

    let tied = sigma[n - 1] - sigma[n] <= tol;
    if !tied {
        let tail = v.column_range(n, n_total);
        let v22 = tail.row_range(n, n_total);
        if !is_singular(&v22)? {
            let x = solution_from_subspace(&tail, n)?;
            return Ok(TlsSolution {
                x,
                c_hat: remove(&tail)?,
                cost,
                case: SolutionCase::Unique,
                singular_values: sigma,
                repaired: None,
            });
        }
    } else if let Some((x, subspace)) = tied_solution(&v, &sigma, n, tol)? {
        return Ok(TlsSolution {
            x: Some(x),
            c_hat: remove(&subspace)?,
            cost,
            case: SolutionCase::NonUnique,
            singular_values: sigma,
            repaired: None,
        });
    }

    let c_hat = remove(&v.column_range(n, n_total))?;
    let a_hat = c_hat.column_range(0, n);
    let b_hat = c_hat.column_range(n, n_total);
    let rep: ColumnRepair = repair_columns(&a_hat, &b_hat, perturb_delta)?;
    let x = rep.solve(&b_hat)?;
    let achieved_cost = rep.a.hstack(&rep.a.matmul(&x)?)?.sub(&c)?.frobenius_norm_sq();
    Ok(TlsSolution {
        x: None,
        c_hat,
        cost,
        case: SolutionCase::NoSolution,
        singular_values: sigma,
        repaired: Some(RepairedSolution {
            x,
            a_hat: rep.a,
            achieved_cost,
            perturb_delta,
            assignment: rep.assignment,
        }),
    })
}

/// The tie case. Every singular direction strictly below the tied value must
/// be discarded; the rest of the discarded subspace comes from the tied block,
/// chosen to complete the bottom block to full rank with maximal energy. When
/// the whole tail is tied this gives the minimum-norm solution `-Y Γ^+`.
fn tied_solution(v: &DenseMatrix, sigma: &[f64], n: usize, tol: f64) -> Result<Option<(DenseMatrix, DenseMatrix)>> {
    let n_total = v.rows();
    let d = n_total - n;
    let target = sigma[n];
    let lo = (0..=n).find(|&i| (sigma[i] - target).abs() <= tol).unwrap_or(n);
    let hi = (n..n_total).take_while(|&i| (sigma[i] - target).abs() <= tol).last().unwrap_or(n);
    let tied = v.column_range(lo, hi + 1);
    let trailing = v.column_range(hi + 1, n_total);
    let from_tied = d - trailing.cols();

    let gamma_t = tied.row_range(n, n_total);
    let gamma_r = trailing.row_range(n, n_total);

    // Project the tied bottom block away from what the trailing block already covers.
    let projected = if trailing.cols() > 0 {
        let fr = svd(&gamma_r)?;
        if fr.rank(SINGULARITY_TOL) < trailing.cols() {
            return Ok(None);
        }
        let ur = fr.u_k(trailing.cols());
        gamma_t.sub(&ur.matmul(&ur.t_matmul(&gamma_t)?)?)?
    } else {
        gamma_t
    };
    let fp = svd(&projected)?;
    let scale = fp.singular_values.first().copied().unwrap_or(0.0);
    if from_tied > 0 && (scale == 0.0 || fp.singular_values[from_tied - 1] < SINGULARITY_TOL) {
        return Ok(None);
    }
    let chosen = tied.matmul(&fp.v_k(from_tied))?;
    let subspace = chosen.hstack(&trailing)?;
    Ok(solution_from_subspace(&subspace, n)?.map(|x| (x, subspace)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::SparseMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy() -> (Matrix, Matrix) {
        let a = SparseMatrix::from_triplets(3, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        let b = SparseMatrix::from_triplets(3, 1, &[(2, 0, 3.0)]).unwrap();
        (a.into(), b.into())
    }

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn toy_costs() {
        let (a, b) = toy();
        let ls = ls_solve(&a, &b).unwrap();
        assert!((ls.cost - 9.0).abs() < 1e-12);
        assert!(ls.x.max_abs() < 1e-12);
        let tls = tls_solve(&a, &b, 1e-6).unwrap();
        assert!((tls.cost - 1.0).abs() < 1e-12);
        assert!((tls_cost(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(tls.case, SolutionCase::NoSolution);
        assert!(tls.x.is_none());
        let rep = tls.repaired.as_ref().unwrap();
        assert!(rep.achieved_cost >= 1.0 - 1e-12);
        assert!(rep.achieved_cost.sqrt() <= 1.0 + 1e-6 * 3.0 + 1e-10);
    }

    #[test]
    fn consistent_system_has_zero_cost() {
        let a = random(8, 3, 1);
        let x0 = random(3, 2, 2);
        let b = a.matmul(&x0).unwrap();
        let (a, b) = (Matrix::Dense(a), Matrix::Dense(b));
        assert!(ls_solve(&a, &b).unwrap().cost < 1e-20);
        let tls = tls_solve(&a, &b, 1e-8).unwrap();
        assert_eq!(tls.case, SolutionCase::Unique);
        assert!(tls.cost < 1e-20);
        assert!(tls.x.unwrap().sub(&x0).unwrap().max_abs() < 1e-8);
    }

    #[test]
    fn unique_case_matches_closed_form() {
        let a = Matrix::Dense(random(12, 3, 3));
        let b = Matrix::Dense(random(12, 2, 4));
        let tls = tls_solve(&a, &b, 1e-8).unwrap();
        assert_eq!(tls.case, SolutionCase::Unique);
        let x = tls.x.as_ref().unwrap();
        let a_hat = tls.c_hat.column_range(0, 3);
        let b_hat = tls.c_hat.column_range(3, 5);
        let c_norm = a.to_dense().hstack(&b.to_dense()).unwrap().frobenius_norm();
        assert!(a_hat.matmul(x).unwrap().sub(&b_hat).unwrap().frobenius_norm() <= 1e-8 * c_norm);
        let s = &tls.singular_values;
        assert!((tls.cost - (s[3] * s[3] + s[4] * s[4])).abs() <= 1e-8 * tls.cost);
        assert!(tls.cost <= ls_solve(&a, &b).unwrap().cost);
    }

    #[test]
    fn tied_spectrum_with_spanning_bottom_block_is_non_unique() {
        // C = diag(2, 1, 1) padded: tie at sigma_2 = sigma_3 and the tied block
        // reaches the response coordinate, so solutions exist.
        let c = DenseMatrix::from_rows(&[
            vec![2.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap();
        let a = Matrix::Dense(c.column_range(0, 2));
        let b = Matrix::Dense(c.column_range(2, 3));
        let tls = tls_solve(&a, &b, 1e-8).unwrap();
        assert_eq!(tls.case, SolutionCase::NonUnique);
        assert!((tls.cost - 1.0).abs() < 1e-12);
        let x = tls.x.as_ref().unwrap();
        // discarding e3 gives X = 0, the minimum-norm choice
        assert!(x.max_abs() < 1e-10);
        let a_hat = tls.c_hat.column_range(0, 2);
        let b_hat = tls.c_hat.column_range(2, 3);
        assert!(a_hat.matmul(x).unwrap().sub(&b_hat).unwrap().max_abs() < 1e-10);
        assert!((tls.c_hat.sub(&c).unwrap().frobenius_norm_sq() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn degenerate_shapes_are_rejected() {
        let a = Matrix::Dense(DenseMatrix::zeros(3, 0));
        let b = Matrix::Dense(random(3, 1, 5));
        assert!(matches!(tls_solve(&a, &b, 1e-6), Err(Error::Degenerate(_))));
        assert!(matches!(tls_cost(&b, &a), Err(Error::Degenerate(_))));
        let short = Matrix::Dense(random(2, 1, 6));
        assert!(tls_solve(&b, &short, 1e-6).is_err());
    }
}
