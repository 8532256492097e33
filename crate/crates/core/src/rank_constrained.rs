//! Closed-form solvers for the small core problems of the sketched pipelines:
//! rank-constrained regression `min ‖A - B Z C‖_F` over rank-k `Z`, its ridge
//! regularized two-factor analogue, plain ridge regression, and the
//! statistical dimension that sizes ridge sketches.
//!
//! Objectives are reported as squared Frobenius norms.

use crate::error::{Error, Result};
use crate::matrix::{svd, DenseMatrix, Matrix, MatrixView, DEFAULT_RANK_TOL};
use crate::sketch::CountSketchTransform;

#[derive(Clone, Debug)]
pub struct RankConstrainedSolution {
    pub z: DenseMatrix,
    /// `‖A - B Z C‖_F^2` at the returned `z`.
    pub objective: f64,
}

/// Minimizes `‖target - left Z right‖_F` over `Z` of rank at most `k`:
/// `Z = left^+ (P_left target P_right)_k right^+`, where the projections are
/// onto the column span of `left` and the row span of `right`.
///
/// `k` larger than the attainable rank is clamped.
pub fn rank_constrained_solve(
    target: &DenseMatrix,
    left: &DenseMatrix,
    right: &DenseMatrix,
    k: usize,
) -> Result<RankConstrainedSolution> {
    if left.rows() != target.rows() || right.cols() != target.cols() {
        return Err(Error::dim("rank_constrained_solve", left.shape(), right.shape()));
    }
    let fl = svd(left)?;
    let fr = svd(right)?;
    let rl = fl.rank(DEFAULT_RANK_TOL);
    let rr = fr.rank(DEFAULT_RANK_TOL);
    let (ul, vl) = (fl.u_k(rl), fl.v_k(rl));
    let (ur, vr) = (fr.u_k(rr), fr.v_k(rr));

    // P = U_left^T target V_right, truncated to rank k.
    let p = ul.t_matmul(target)?.matmul(&vr)?;
    let pk = svd(&p)?.reconstruct(k);

    // left^+ U_left = V_left S_left^{-1} and V_right^T right^+ = S_right^{-1} U_right^T.
    let inv_l: Vec<f64> = fl.singular_values[..rl].iter().map(|s| 1.0 / s).collect();
    let inv_r: Vec<f64> = fr.singular_values[..rr].iter().map(|s| 1.0 / s).collect();
    let z = vl
        .scale_columns(&inv_l)
        .matmul(&pk)?
        .matmul(&ur.scale_columns(&inv_r).transpose())?;

    let fit = left.matmul(&z)?.matmul(right)?;
    let objective = target.sub(&fit)?.frobenius_norm_sq();
    Ok(RankConstrainedSolution { z, objective })
}

/// Solution of the ridge-regularized two-factor problem.
#[derive(Clone, Debug)]
pub struct RegularizedPairSolution {
    /// `C Z_R`, `n1 x k`.
    pub left_factor: DenseMatrix,
    /// `Z_S D`, `k x n2`.
    pub right_factor: DenseMatrix,
    /// `Z_R`, `r x k`.
    pub z_left: DenseMatrix,
    /// `Z_S`, `k x s`.
    pub z_right: DenseMatrix,
    pub objective: f64,
    pub lambda: f64,
}

impl RegularizedPairSolution {
    /// `‖left_factor right_factor - target‖_F^2`.
    pub fn data_fit(&self, target: &DenseMatrix) -> Result<f64> {
        Ok(self.left_factor.matmul(&self.right_factor)?.sub(target)?.frobenius_norm_sq())
    }
}

/// `‖U V - target‖_F^2 + λ‖U‖_F^2 + λ‖V‖_F^2`.
pub fn regularized_objective(u: &DenseMatrix, v: &DenseMatrix, target: &DenseMatrix, lambda: f64) -> Result<f64> {
    let fit = u.matmul(v)?.sub(target)?.frobenius_norm_sq();
    Ok(fit + lambda * (u.frobenius_norm_sq() + v.frobenius_norm_sq()))
}

/// Minimizes `‖C Z_R Z_S D - B‖_F^2 + λ‖C Z_R‖_F^2 + λ‖Z_S D‖_F^2` over
/// `Z_R` (r x k) and `Z_S` (k x s).
///
/// With `U = C Z_R = Q_C U'` and `V = Z_S D = V' Q_D^T` for orthonormal bases
/// of the column span of `C` and the row span of `D`, the problem reduces to
/// `min ‖U'V' - Q_C^T B Q_D‖^2 + λ(‖U'‖^2 + ‖V'‖^2)`. Balanced factors of the
/// top-k singular triples with values shrunk by λ solve it.
pub fn regularized_rank_solve(
    c: &DenseMatrix,
    d: &DenseMatrix,
    b: &DenseMatrix,
    k: usize,
    lambda: f64,
) -> Result<RegularizedPairSolution> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    if c.rows() != b.rows() || d.cols() != b.cols() {
        return Err(Error::dim("regularized_rank_solve", c.shape(), d.shape()));
    }
    let fc = svd(c)?;
    let fd = svd(d)?;
    let rc = fc.rank(DEFAULT_RANK_TOL);
    let rd = fd.rank(DEFAULT_RANK_TOL);
    let qc = fc.u_k(rc);
    let qd = fd.v_k(rd);

    let core = qc.t_matmul(b)?.matmul(&qd)?;
    let fm = svd(&core)?;
    let kk = k.min(rc).min(rd);
    let roots: Vec<f64> = fm.singular_values[..kk]
        .iter()
        .map(|s| (s - lambda).max(0.0).sqrt())
        .collect();
    let u_small = fm.u_k(kk).scale_columns(&roots); // rc x kk
    let v_small = fm.v_k(kk).scale_columns(&roots); // rd x kk, transposed factor

    let pad = |m: DenseMatrix, rows: usize| {
        let mut out = DenseMatrix::zeros(rows, k);
        for i in 0..rows {
            out.row_mut(i)[..kk].copy_from_slice(m.row(i));
        }
        out
    };

    let left_factor = pad(qc.matmul(&u_small)?, c.rows());
    let right_factor = pad(qd.matmul(&v_small)?, d.cols()).transpose();

    // Z_R = C^+ Q_C U' = V_C S_C^{-1} U';  Z_S = V' Q_D^T D^+ = V' S_D^{-1} U_D^T.
    let inv_c: Vec<f64> = fc.singular_values[..rc].iter().map(|s| 1.0 / s).collect();
    let inv_d: Vec<f64> = fd.singular_values[..rd].iter().map(|s| 1.0 / s).collect();
    let z_left = pad(fc.v_k(rc).scale_columns(&inv_c).matmul(&u_small)?, c.cols());
    let z_right = pad(fd.u_k(rd).scale_columns(&inv_d).matmul(&v_small)?, d.rows()).transpose();

    let objective = regularized_objective(&left_factor, &right_factor, b, lambda)?;
    Ok(RegularizedPairSolution {
        left_factor,
        right_factor,
        z_left,
        z_right,
        objective,
        lambda,
    })
}

/// `argmin_X ‖A X - B‖_F^2 + λ‖X‖_F^2`, computed from the SVD of `A`.
/// With `λ = 0` this is the minimum-norm least-squares solution `A^+ B`.
pub fn ridge_solve<M: MatrixView + ?Sized>(a: &M, b: &DenseMatrix, lambda: f64) -> Result<DenseMatrix> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let a = a.dense();
    if a.rows() != b.rows() {
        return Err(Error::dim("ridge_solve", a.shape(), b.shape()));
    }
    let f = svd(a.as_ref())?;
    let k = if lambda == 0.0 {
        f.rank(DEFAULT_RANK_TOL)
    } else {
        f.singular_values.iter().take_while(|&&s| s > 0.0).count()
    };
    let filter: Vec<f64> = f.singular_values[..k].iter().map(|s| s / (s * s + lambda)).collect();
    let utb = f.u_k(k).t_matmul(b)?;
    f.v_k(k).scale_columns(&filter).matmul(&utb)
}

/// `‖A X - B‖_F^2 + λ‖X‖_F^2`.
pub fn ridge_objective<M: MatrixView + ?Sized>(a: &M, b: &DenseMatrix, x: &DenseMatrix, lambda: f64) -> Result<f64> {
    let a = a.dense();
    Ok(a.matmul(x)?.sub(b)?.frobenius_norm_sq() + lambda * x.frobenius_norm_sq())
}

/// Sketch-and-solve ridge regression: `ridge_solve(S A, S B, λ)` with a
/// CountSketch `S` of `rows` rows.
pub fn sketched_ridge_solve(a: &Matrix, b: &Matrix, lambda: f64, rows: usize, seed: u64) -> Result<DenseMatrix> {
    let s = CountSketchTransform::new(rows, a.rows(), seed)?;
    let sa = s.apply_left(a)?;
    let sb = s.apply_left(b)?;
    ridge_solve(&sa, &sb, lambda)
}

/// `sd_λ(A) = Σ_i 1 / (1 + λ / σ_i^2)` over the nonzero singular values.
pub fn statistical_dimension<M: MatrixView + ?Sized>(a: &M, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("lambda must be finite and nonnegative, got {lambda}")));
    }
    let f = svd(a)?;
    let k = f.rank(DEFAULT_RANK_TOL);
    Ok(f.singular_values[..k].iter().map(|s| 1.0 / (1.0 + lambda / (s * s))).sum())
}
