//! Sketching-accelerated regularized total least squares.
//!
//! Minimizes `‖U V - C‖_F^2 + λ‖U‖_F^2 + λ‖V‖_F^2` over rank-n factorizations
//! with `U = C S2^T Z2` and `V = Z1 S1 C`, then reads off `X` from a sketched,
//! repaired split of `U V` exactly as in the unregularized pipeline.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ftls::{block_residuals, perturbation, split, stack, FactoredLowRank, FtlsDiagnostics, SketchSizes, Sizing, SplitResult};
use crate::matrix::{DenseMatrix, Matrix};
use crate::rank_constrained::regularized_rank_solve;
use crate::rng::labeled_seed;
use crate::sketch::{CountSketchTransform, RowSketch, SketchKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RftlsConfig {
    pub lambda: f64,
    pub eps: f64,
    /// Additive slack; `None` means `1e-2 ‖C‖_F`.
    pub delta: Option<f64>,
    pub sizing: Sizing,
    /// Constants for `s1`, `s2`, `s3`, and `d1`.
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub seed: u64,
    /// Columns are sketched only when `d > d_large_factor * s1`.
    pub d_large_factor: f64,
    pub block_rows: usize,
    /// Compute the objective after solving (not timed).
    pub evaluate_cost: bool,
}

impl Default for RftlsConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            eps: 0.1,
            delta: None,
            sizing: Sizing::Theory,
            c1: 4.0,
            c2: 4.0,
            c3: 4.0,
            c4: 4.0,
            seed: 0,
            d_large_factor: 2.0,
            block_rows: 1024,
            evaluate_cost: true,
        }
    }
}

/// Sketch dimensions of the regularized pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RftlsSizes {
    pub s1: usize,
    /// Column sketch width; equal to `n + d` when columns are not sketched.
    pub s2: usize,
    pub s3: usize,
    pub d1: usize,
}

impl RftlsConfig {
    pub fn with_density(lambda: f64, rho: f64, seed: u64) -> Self {
        Self {
            lambda,
            sizing: Sizing::Density(rho),
            seed,
            ..Self::default()
        }
    }

    pub fn with_rows(lambda: f64, rows: usize, seed: u64) -> Self {
        Self {
            lambda,
            sizing: Sizing::Rows(rows),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {}", self.lambda)));
        }
        self.as_ftls().validate()
    }

    fn as_ftls(&self) -> crate::ftls::FtlsConfig {
        crate::ftls::FtlsConfig {
            eps: self.eps,
            delta: self.delta,
            sizing: self.sizing,
            c1: self.c1,
            c2: self.c3,
            c3: self.c2,
            c4: self.c4,
            seed: self.seed,
            d_large_factor: self.d_large_factor,
            block_rows: self.block_rows,
            ..Default::default()
        }
    }

    /// Sizes mirror the unregularized pipeline: `s1`, `s3`, `d1` play the
    /// roles of `s1`, `s2`, `d2` there, and `s2` that of the column sample.
    pub fn sizes(&self, m: usize, n: usize, d: usize) -> RftlsSizes {
        let SketchSizes { s1, s2, d1, d2 } = self.as_ftls().sizes(m, n, d);
        let sketch_columns = d as f64 > self.d_large_factor * s1 as f64;
        RftlsSizes {
            s1,
            s2: if sketch_columns { d1.max(n) } else { n + d },
            s3: s2,
            d1: d2,
        }
    }
}

/// The three terms of the regularized objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizedCost {
    /// `‖[Â, Â X] - C‖_F^2`.
    pub data_fit: f64,
    /// `λ‖Û‖_F^2`.
    pub u_penalty: f64,
    /// `λ‖V̂‖_F^2`.
    pub v_penalty: f64,
}

impl RegularizedCost {
    pub fn total(&self) -> f64 {
        self.data_fit + self.u_penalty + self.v_penalty
    }
}

#[derive(Clone, Debug)]
pub struct RftlsOutput {
    pub x: DenseMatrix,
    /// `Û = C S2^T Ẑ2`, `m x n`.
    pub u_hat: DenseMatrix,
    /// `V̂ = Ẑ1 S1 C`, `n x (n + d)`.
    pub v_hat: DenseMatrix,
    pub factors: FactoredLowRank,
    pub split: SplitResult,
    pub sizes: RftlsSizes,
    pub cost: Option<RegularizedCost>,
    /// `‖[Â, Â X] - Û V̂‖_F^2`, when the cost was computed.
    pub coupling_residual: Option<f64>,
    pub diagnostics: FtlsDiagnostics,
}

/// Runs the regularized pipeline on `[A, B]`.
pub fn rftls_solve(a: &Matrix, b: &Matrix, cfg: &RftlsConfig) -> Result<RftlsOutput> {
    cfg.validate()?;
    let c = stack(a, b)?;
    let (m, n, d) = (c.rows(), a.cols(), b.cols());
    let sizes = cfg.sizes(m, n, d);
    let perturb_delta = perturbation(cfg.delta, &c)?;
    let seed = cfg.seed;
    let started = Instant::now();
    let mut work = 0;

    let s1 = CountSketchTransform::new(sizes.s1, m, labeled_seed(seed, "s1"))?;
    let (s1c, w) = s1.apply_left_with_work(&c)?;
    work += w;

    let column_sketch = sizes.s2 < n + d;
    let cs2t = if column_sketch {
        let s2 = CountSketchTransform::new(sizes.s2, n + d, labeled_seed(seed, "s2"))?;
        work += c.nnz();
        Matrix::Dense(s2.apply_right_transpose(&c)?)
    } else {
        c.clone()
    };

    let d1 = RowSketch::build(SketchKind::Leverage, sizes.d1, &cs2t, labeled_seed(seed, "d1"))?;
    let (d1cs2t, w) = d1.apply_left_with_work(&cs2t)?;
    work += w;
    let d1c = if column_sketch {
        let (d1c, w) = d1.apply_left_with_work(&c)?;
        work += w;
        d1c
    } else {
        d1cs2t.clone()
    };

    let pair = regularized_rank_solve(&d1cs2t, &s1c, &d1c, n, cfg.lambda)?;
    let factors = FactoredLowRank {
        left: cs2t,
        mid: pair.z_left.matmul(&pair.z_right)?,
        right: s1c,
    };
    let (split, w) = split(&factors, n, d, perturb_delta, (SketchKind::CountSketch, sizes.s3), labeled_seed(seed, "s3"))?;
    work += w;
    let x = split.solve()?;
    let wall_time_seconds = started.elapsed().as_secs_f64();

    let u_hat = factors.left.matmul_dense(&pair.z_left)?;
    let v_hat = pair.z_right.matmul(&factors.right)?;
    let (cost, coupling_residual) = if cfg.evaluate_cost {
        let (data_fit, coupling) = block_residuals(&factors, &x, &split.pi, perturb_delta, &c, cfg.block_rows)?;
        let cost = RegularizedCost {
            data_fit,
            u_penalty: cfg.lambda * u_hat.frobenius_norm_sq(),
            v_penalty: cfg.lambda * v_hat.frobenius_norm_sq(),
        };
        (Some(cost), Some(coupling))
    } else {
        (None, None)
    };

    let diagnostics = FtlsDiagnostics {
        method: "rftls".into(),
        mode: cfg.sizing.label().into(),
        rho: match cfg.sizing {
            Sizing::Density(rho) => Some(rho),
            _ => None,
        },
        eps: matches!(cfg.sizing, Sizing::Theory).then_some(cfg.eps),
        lambda: Some(cfg.lambda),
        seed,
        cost: cost.map(|c| c.total()),
        wall_time_seconds,
        sketch_sizes: SketchSizes {
            s1: sizes.s1,
            s2: sizes.s3,
            d1: sizes.s2,
            d2: sizes.d1,
        },
        column_sampling: column_sketch,
        repaired_columns: split.repaired_columns(),
        rank_deficient: split.rank() < n,
        perturb_delta,
        apply_work: work,
    };
    Ok(RftlsOutput {
        x,
        u_hat,
        v_hat,
        factors,
        split,
        sizes,
        cost,
        coupling_residual,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::SparseMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn huge_lambda_zeroes_the_factors() {
        let a = Matrix::Dense(random(30, 3, 1));
        let b = Matrix::Dense(random(30, 1, 2));
        let c_norm = a.hstack(&b).unwrap().frobenius_norm_sq();
        let out = rftls_solve(&a, &b, &RftlsConfig::with_density(1e12, 0.5, 3)).unwrap();
        assert!(out.u_hat.max_abs() < 1e-12 && out.v_hat.max_abs() < 1e-12);
        let cost = out.cost.unwrap();
        assert!((cost.total() - c_norm).abs() <= 0.01 * c_norm);
    }

    #[test]
    fn objective_decomposition_is_consistent() {
        let a = Matrix::Dense(random(40, 3, 4));
        let b = Matrix::Dense(random(40, 2, 5));
        let cfg = RftlsConfig::with_density(0.5, 0.5, 6);
        let out = rftls_solve(&a, &b, &cfg).unwrap();
        let cost = out.cost.unwrap();
        assert!((cost.u_penalty - 0.5 * out.u_hat.frobenius_norm_sq()).abs() <= 1e-12 * cost.u_penalty.max(1.0));
        assert!((cost.v_penalty - 0.5 * out.v_hat.frobenius_norm_sq()).abs() <= 1e-12 * cost.v_penalty.max(1.0));
        assert_eq!(out.diagnostics.cost, Some(cost.total()));
        assert_eq!(out.diagnostics.lambda, Some(0.5));
        // U V is the factored product
        let uv = out.u_hat.matmul(&out.v_hat).unwrap();
        assert!(uv.sub(&out.factors.materialize().unwrap()).unwrap().max_abs() < 1e-9 * uv.max_abs().max(1.0));
    }

    #[test]
    fn lambda_must_be_positive() {
        let a = SparseMatrix::from_triplets(3, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        let b = SparseMatrix::from_triplets(3, 1, &[(2, 0, 3.0)]).unwrap();
        let err = rftls_solve(&a.into(), &b.into(), &RftlsConfig::with_rows(0.0, 2, 0));
        assert!(matches!(err, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn wide_inputs_sketch_columns() {
        let cfg = RftlsConfig::with_rows(1.0, 4, 0);
        assert_eq!(cfg.sizes(100, 2, 20).s2, 4);
        assert_eq!(cfg.sizes(100, 2, 3).s2, 5);
    }
}
