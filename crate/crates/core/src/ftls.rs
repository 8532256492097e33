//! Sketching-accelerated total least squares.
//!
//! The pipeline compresses `C = [A, B]` from both sides, finds a rank-n
//! approximation `Ĉ = (C D1) Z2 (S1 C)` that never exists as a full matrix,
//! then solves a small sketched system `Ā X = B̄` after repairing `Ā` so that
//! the system is consistent. [`evaluate`] recovers the exact objective
//! block-wise; [`estimate_cost`] approximates it from another sketch, which is
//! what best-of-k boosting uses to pick a run.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{svd, DenseMatrix, Matrix};
use crate::rank_constrained::rank_constrained_solve;
use crate::repair::{repair_columns, ColumnRepair};
use crate::rng::{derive_seed, labeled_seed};
use crate::sketch::{leverage_scores, CountSketchTransform, LeverageSampler, RowSketch, SketchKind};

/// How sketch dimensions are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "value")]
pub enum Sizing {
    /// `O(n/ε)` sizes scaled by the config constants.
    Theory,
    /// Every row sketch keeps `⌈ρ m⌉` rows and column sampling keeps `⌈ρ (n+d)⌉`.
    Density(f64),
    /// Every row sketch keeps exactly this many rows.
    Rows(usize),
}

impl Sizing {
    pub fn label(&self) -> &'static str {
        match self {
            Sizing::Theory => "theory",
            Sizing::Density(_) => "density",
            Sizing::Rows(_) => "rows",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FtlsConfig {
    pub eps: f64,
    /// Additive slack; `None` means `1e-2 ‖C‖_F`.
    pub delta: Option<f64>,
    pub sizing: Sizing,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub seed: u64,
    /// Columns are sampled only when `d > d_large_factor * s1`.
    pub d_large_factor: f64,
    pub block_rows: usize,
    pub s1_kind: SketchKind,
    pub d2_kind: SketchKind,
    pub s2_kind: SketchKind,
    /// Compute the exact objective after solving (not timed).
    pub evaluate_cost: bool,
}

impl Default for FtlsConfig {
    fn default() -> Self {
        Self {
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
            s1_kind: SketchKind::CountSketch,
            d2_kind: SketchKind::Leverage,
            s2_kind: SketchKind::CountSketch,
            evaluate_cost: true,
        }
    }
}

impl FtlsConfig {
    pub fn with_density(rho: f64, seed: u64) -> Self {
        Self {
            sizing: Sizing::Density(rho),
            seed,
            ..Self::default()
        }
    }

    pub fn with_rows(rows: usize, seed: u64) -> Self {
        Self {
            sizing: Sizing::Rows(rows),
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return bad(format!("eps must lie in (0, 1), got {}", self.eps));
        }
        if let Some(delta) = self.delta {
            if !(delta > 0.0 && delta.is_finite()) {
                return bad(format!("delta must be positive, got {delta}"));
            }
        }
        match self.sizing {
            Sizing::Density(rho) if !(rho > 0.0 && rho <= 1.0) => {
                return bad(format!("density must lie in (0, 1], got {rho}"));
            }
            Sizing::Rows(0) => return bad("row count must be at least 1".into()),
            _ => {}
        }
        for (name, c) in [("c1", self.c1), ("c2", self.c2), ("c3", self.c3), ("c4", self.c4)] {
            if !(c >= 1.0 && c.is_finite()) {
                return bad(format!("{name} must be at least 1, got {c}"));
            }
        }
        if !(self.d_large_factor > 0.0) {
            return bad(format!("d_large_factor must be positive, got {}", self.d_large_factor));
        }
        if self.block_rows == 0 {
            return bad("block_rows must be at least 1".into());
        }
        Ok(())
    }

    /// Sketch dimensions for an `m x (n + d)` input.
    pub fn sizes(&self, m: usize, n: usize, d: usize) -> SketchSizes {
        let width = n + d;
        let (s1, s2, d1, d2) = match self.sizing {
            Sizing::Theory => {
                let base = (n as f64 / self.eps).ceil();
                let logged = (n as f64 / self.eps * (n as f64 / self.eps + 2.0).ln()).ceil();
                (
                    (self.c1 * base).ceil() as usize,
                    (self.c2 * base).ceil() as usize,
                    (self.c3 * logged).ceil() as usize,
                    (self.c4 * logged).ceil() as usize,
                )
            }
            Sizing::Density(rho) => {
                let rows = (rho * m as f64).ceil() as usize;
                (rows, rows, (rho * width as f64).ceil() as usize, rows)
            }
            Sizing::Rows(r) => (r, r, r, r),
        };
        SketchSizes {
            s1: s1.clamp(1, m),
            s2: s2.clamp(1, m),
            d1: d1.clamp(1, width),
            d2: d2.clamp(1, m),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchSizes {
    pub s1: usize,
    pub s2: usize,
    pub d1: usize,
    pub d2: usize,
}

/// `Ĉ = left · mid · right`, kept in factored form.
#[derive(Clone, Debug)]
pub struct FactoredLowRank {
    /// `C D1`, `m x d1`, in the storage form of `C`.
    pub left: Matrix,
    /// `Z2`, `d1 x s1`.
    pub mid: DenseMatrix,
    /// `S1 C`, `s1 x (n + d)`.
    pub right: DenseMatrix,
}

impl FactoredLowRank {
    pub fn rows(&self) -> usize {
        self.left.rows()
    }

    pub fn cols(&self) -> usize {
        self.right.cols()
    }

    /// `mid · right`, the small factor shared by every row block.
    pub fn inner(&self) -> Result<DenseMatrix> {
        self.mid.matmul(&self.right)
    }

    /// The full product; only sensible for small inputs.
    pub fn materialize(&self) -> Result<DenseMatrix> {
        self.left.matmul_dense(&self.inner()?)
    }
}

/// Output of [`split`]: the sketched, repaired system `Ā X = B̄`.
#[derive(Clone, Debug)]
pub struct SplitResult {
    pub a_bar: DenseMatrix,
    pub b_bar: DenseMatrix,
    /// `pi[i] = Some(j)` when column `i` of `Ā` received `perturb_delta · B̄[:, j]`.
    pub pi: Vec<Option<usize>>,
    pub perturb_delta: f64,
    repair: ColumnRepair,
}

impl SplitResult {
    /// Numerical rank of `Ā` after repair.
    pub fn rank(&self) -> usize {
        self.repair.rank()
    }

    /// The minimum-norm solution of `Ā X = B̄`, exact because the repair
    /// leaves `B̄` in the span of `Ā`.
    pub fn solve(&self) -> Result<DenseMatrix> {
        let f = svd(&self.a_bar)?;
        let floor = f64::EPSILON * f.singular_values.first().copied().unwrap_or(0.0);
        let r = f.singular_values.iter().take(self.rank()).take_while(|&&s| s > floor).count();
        let inv: Vec<f64> = f.singular_values[..r].iter().map(|s| 1.0 / s).collect();
        f.v_k(r).scale_columns(&inv).matmul(&f.u_k(r).t_matmul(&self.b_bar)?)
    }

    /// The basic solution supported on a maximal independent set of columns.
    pub fn basic_solution(&self) -> Result<DenseMatrix> {
        self.repair.solve(&self.b_bar)
    }

    pub fn repaired_columns(&self) -> usize {
        self.pi.iter().filter(|p| p.is_some()).count()
    }
}

/// Forms `C̄ = (S2 · left) · mid · right` with a sketch `S2` of `s2` rows
/// and repairs its first `n` columns against the last `d`.
pub fn split(
    factors: &FactoredLowRank,
    n: usize,
    d: usize,
    perturb_delta: f64,
    s2: (SketchKind, usize),
    seed: u64,
) -> Result<(SplitResult, usize)> {
    if factors.cols() != n + d {
        return Err(Error::dim("split", (factors.rows(), factors.cols()), (n, d)));
    }
    let sketch = RowSketch::build(s2.0, s2.1, &factors.left, seed)?;
    let (s2_left, work) = sketch.apply_left_with_work(&factors.left)?;
    let c_bar = s2_left.matmul(&factors.inner()?)?;
    let a_bar = c_bar.column_range(0, n);
    let b_bar = c_bar.column_range(n, n + d);
    let repair = repair_columns(&a_bar, &b_bar, perturb_delta)?;
    let result = SplitResult {
        a_bar: repair.a.clone(),
        b_bar,
        pi: repair.assignment.clone(),
        perturb_delta,
        repair,
    };
    Ok((result, work))
}

fn check_pi(pi: &[Option<usize>], n: usize, d: usize) -> Result<()> {
    if pi.len() != n {
        return Err(Error::CorruptedState(format!("column map has {} entries for n = {n}", pi.len())));
    }
    if let Some(j) = pi.iter().flatten().find(|&&j| j >= d) {
        return Err(Error::CorruptedState(format!("column map points at response column {j}, but d = {d}")));
    }
    Ok(())
}

/// `[Â, Â X]` for a block of rows of `Ĉ`, with the repair applied to `Â`.
fn fitted_block(c_hat: &DenseMatrix, x: &DenseMatrix, pi: &[Option<usize>], perturb: f64) -> Result<DenseMatrix> {
    let n = pi.len();
    let mut a_hat = c_hat.column_range(0, n);
    for (i, j) in pi.iter().enumerate() {
        if let Some(j) = *j {
            for r in 0..a_hat.rows() {
                a_hat[(r, i)] += perturb * c_hat[(r, n + j)];
            }
        }
    }
    let ax = a_hat.matmul(x)?;
    a_hat.hstack(&ax)
}

/// `‖[Â, Â X] - C‖_F^2` with `Â` rebuilt from the factors in blocks of
/// `block_rows` rows, and repaired exactly as in [`split`].
pub fn evaluate(
    factors: &FactoredLowRank,
    x: &DenseMatrix,
    pi: &[Option<usize>],
    perturb_delta: f64,
    c: &Matrix,
    block_rows: usize,
) -> Result<f64> {
    block_residuals(factors, x, pi, perturb_delta, c, block_rows).map(|(to_c, _)| to_c)
}

/// `(‖[Â, Â X] - C‖_F^2, ‖[Â, Â X] - Ĉ‖_F^2)` in one blocked pass.
pub(crate) fn block_residuals(
    factors: &FactoredLowRank,
    x: &DenseMatrix,
    pi: &[Option<usize>],
    perturb_delta: f64,
    c: &Matrix,
    block_rows: usize,
) -> Result<(f64, f64)> {
    let n = x.rows();
    let d = x.cols();
    check_pi(pi, n, d)?;
    if c.shape() != (factors.rows(), factors.cols()) || n + d != c.cols() {
        return Err(Error::dim("evaluate", c.shape(), (factors.rows(), factors.cols())));
    }
    let inner = factors.inner()?;
    let block = block_rows.max(1);
    let (mut to_c, mut to_c_hat) = (0.0, 0.0);
    let mut start = 0;
    while start < c.rows() {
        let end = (start + block).min(c.rows());
        let c_hat = factors.left.rows_matmul_dense(start, end, &inner)?;
        let mut fitted = fitted_block(&c_hat, x, pi, perturb_delta)?;
        to_c_hat += fitted.sub(&c_hat)?.frobenius_norm_sq();
        for r in start..end {
            let row = fitted.row_mut(r - start);
            c.for_each_in_row(r, |j, v| row[j] -= v);
        }
        to_c += fitted.frobenius_norm_sq();
        start = end;
    }
    Ok((to_c, to_c_hat))
}

/// One estimate `‖S [Â, Â X] - S C‖_F^2` for a given CountSketch `S`.
pub fn estimate_cost_with(
    factors: &FactoredLowRank,
    x: &DenseMatrix,
    pi: &[Option<usize>],
    perturb_delta: f64,
    c: &Matrix,
    sketch: &CountSketchTransform,
) -> Result<f64> {
    check_pi(pi, x.rows(), x.cols())?;
    let s_c_hat = sketch.apply_left(&factors.left)?.matmul(&factors.inner()?)?;
    let fitted = fitted_block(&s_c_hat, x, pi, perturb_delta)?;
    Ok(fitted.sub(&sketch.apply_left(c)?)?.frobenius_norm_sq())
}

/// Median of `trials` CountSketch estimates of the objective, each with
/// `⌈4 / ε_est^2⌉` rows.
#[allow(clippy::too_many_arguments)]
pub fn estimate_cost(
    factors: &FactoredLowRank,
    x: &DenseMatrix,
    pi: &[Option<usize>],
    perturb_delta: f64,
    c: &Matrix,
    eps_est: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if !(eps_est > 0.0 && eps_est < 1.0) {
        return Err(Error::InvalidArgument(format!("eps_est must lie in (0, 1), got {eps_est}")));
    }
    if trials.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("trials must be odd, got {trials}")));
    }
    let rows = (4.0 / (eps_est * eps_est)).ceil() as usize;
    let mut estimates = (0..trials)
        .map(|t| {
            let sketch = CountSketchTransform::new(rows, c.rows(), derive_seed(seed, t as u64))?;
            estimate_cost_with(factors, x, pi, perturb_delta, c, &sketch)
        })
        .collect::<Result<Vec<_>>>()?;
    estimates.sort_by(f64::total_cmp);
    Ok(estimates[trials / 2])
}

/// Per-run record, serializable for reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FtlsDiagnostics {
    pub method: String,
    pub mode: String,
    pub rho: Option<f64>,
    pub eps: Option<f64>,
    pub lambda: Option<f64>,
    pub seed: u64,
    /// Exact objective from [`evaluate`], when requested.
    pub cost: Option<f64>,
    pub wall_time_seconds: f64,
    pub sketch_sizes: SketchSizes,
    pub column_sampling: bool,
    pub repaired_columns: usize,
    pub rank_deficient: bool,
    pub perturb_delta: f64,
    /// Multiply-adds spent applying sketches and samplers to the input.
    pub apply_work: usize,
}

#[derive(Clone, Debug)]
pub struct FtlsOutput {
    pub x: DenseMatrix,
    pub factors: FactoredLowRank,
    pub split: SplitResult,
    pub diagnostics: FtlsDiagnostics,
}

impl FtlsOutput {
    pub fn evaluate(&self, c: &Matrix, block_rows: usize) -> Result<f64> {
        evaluate(&self.factors, &self.x, &self.split.pi, self.split.perturb_delta, c, block_rows)
    }
}

pub(crate) fn stack(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows() != b.rows() {
        return Err(Error::dim("stack", a.shape(), b.shape()));
    }
    if a.cols() == 0 || b.cols() == 0 {
        return Err(Error::Degenerate(format!(
            "total least squares needs n >= 1 and d >= 1, got n = {}, d = {}",
            a.cols(),
            b.cols()
        )));
    }
    if a.rows() < a.cols() + 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least n + 1 = {} rows, got {}",
            a.cols() + 1,
            a.rows()
        )));
    }
    a.hstack(b)
}

/// `δ / (m (n + d))`, with `δ` defaulting to `1e-2 ‖C‖_F`.
pub(crate) fn perturbation(delta: Option<f64>, c: &Matrix) -> Result<f64> {
    let delta = match delta {
        Some(delta) => delta,
        None => 1e-2 * c.frobenius_norm_sq().sqrt(),
    };
    if !(delta > 0.0) {
        return Err(Error::Degenerate("input matrix is zero".into()));
    }
    Ok(delta / (c.rows() * c.cols()) as f64)
}

/// Runs the full pipeline on `[A, B]`.
pub fn ftls_solve(a: &Matrix, b: &Matrix, cfg: &FtlsConfig) -> Result<FtlsOutput> {
    cfg.validate()?;
    let c = stack(a, b)?;
    let (m, n, d) = (c.rows(), a.cols(), b.cols());
    let sizes = cfg.sizes(m, n, d);
    let perturb_delta = perturbation(cfg.delta, &c)?;
    let seed = cfg.seed;

    let started = Instant::now();
    let mut work = 0;

    let s1 = RowSketch::build(cfg.s1_kind, sizes.s1, &c, labeled_seed(seed, "s1"))?;
    let (s1c, w) = s1.apply_left_with_work(&c)?;
    work += w;

    let column_sampling = d as f64 > cfg.d_large_factor * sizes.s1 as f64;
    let cd1 = if column_sampling {
        let scores = leverage_scores(&Matrix::Dense(s1c.transpose()))?;
        let d1 = LeverageSampler::from_scores(&scores, sizes.d1, 1.0, labeled_seed(seed, "d1"))?;
        let (cd1, w) = d1.apply_columns_with_work(&c)?;
        work += w;
        cd1
    } else {
        c.clone()
    };

    let d2 = RowSketch::build(cfg.d2_kind, sizes.d2, &cd1, labeled_seed(seed, "d2"))?;
    let (d2cd1, w) = d2.apply_left_with_work(&cd1)?;
    work += w;
    let d2c = if column_sampling {
        let (d2c, w) = d2.apply_left_with_work(&c)?;
        work += w;
        d2c
    } else {
        d2cd1.clone()
    };

    let z2 = rank_constrained_solve(&d2c, &d2cd1, &s1c, n)?.z;
    let factors = FactoredLowRank {
        left: cd1,
        mid: z2,
        right: s1c,
    };
    let (split, w) = split(&factors, n, d, perturb_delta, (cfg.s2_kind, sizes.s2), labeled_seed(seed, "s2"))?;
    work += w;
    let x = split.solve()?;
    let wall_time_seconds = started.elapsed().as_secs_f64();

    let cost = if cfg.evaluate_cost {
        Some(evaluate(&factors, &x, &split.pi, perturb_delta, &c, cfg.block_rows)?)
    } else {
        None
    };
    let diagnostics = FtlsDiagnostics {
        method: "ftls".into(),
        mode: cfg.sizing.label().into(),
        rho: match cfg.sizing {
            Sizing::Density(rho) => Some(rho),
            _ => None,
        },
        eps: matches!(cfg.sizing, Sizing::Theory).then_some(cfg.eps),
        lambda: None,
        seed,
        cost,
        wall_time_seconds,
        sketch_sizes: sizes,
        column_sampling,
        repaired_columns: split.repaired_columns(),
        rank_deficient: split.rank() < n,
        perturb_delta,
        apply_work: work,
    };
    Ok(FtlsOutput {
        x,
        factors,
        split,
        diagnostics,
    })
}

/// Settings for scoring candidate runs during boosting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub eps: f64,
    pub trials: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { eps: 0.2, trials: 9 }
    }
}

#[derive(Clone, Debug)]
pub struct BoostedOutput {
    pub best: FtlsOutput,
    pub selected_run: usize,
    /// Estimated objective per run; `None` for runs that failed.
    pub scores: Vec<Option<f64>>,
}

/// Seed of run `index` when boosting from `seed`; run 0 keeps `seed` itself.
pub fn run_seed(seed: u64, index: usize) -> u64 {
    if index == 0 {
        seed
    } else {
        derive_seed(seed, index as u64)
    }
}

/// Runs the pipeline `runs` times with independent seeds (concurrently), scores
/// each run with [`estimate_cost`], and keeps the lowest score. Ties go to the
/// lowest run index, so the result does not depend on scheduling.
pub fn ftls_boosted(a: &Matrix, b: &Matrix, cfg: &FtlsConfig, runs: usize, est: EstimatorConfig) -> Result<BoostedOutput> {
    if runs == 0 {
        return Err(Error::InvalidArgument("runs must be at least 1".into()));
    }
    let c = stack(a, b)?;
    let est_seed = labeled_seed(cfg.seed, "estimator");
    let outcomes: Vec<Result<(FtlsOutput, f64)>> = (0..runs)
        .into_par_iter()
        .map(|k| {
            let run_cfg = FtlsConfig {
                seed: run_seed(cfg.seed, k),
                ..cfg.clone()
            };
            let out = ftls_solve(a, b, &run_cfg)?;
            let score = estimate_cost(
                &out.factors,
                &out.x,
                &out.split.pi,
                out.split.perturb_delta,
                &c,
                est.eps,
                est.trials,
                est_seed,
            )?;
            Ok((out, score))
        })
        .collect();

    let scores: Vec<Option<f64>> = outcomes.iter().map(|o| o.as_ref().ok().map(|(_, s)| *s)).collect();
    let selected = scores
        .iter()
        .enumerate()
        .filter_map(|(k, s)| s.map(|s| (k, s)))
        .fold(None, |best: Option<(usize, f64)>, (k, s)| match best {
            Some((_, bs)) if bs <= s => best,
            _ => Some((k, s)),
        });
    match selected {
        Some((k, _)) => {
            let best = outcomes.into_iter().nth(k).expect("index in range")?.0;
            Ok(BoostedOutput {
                best,
                selected_run: k,
                scores,
            })
        }
        None => {
            let first = outcomes
                .into_iter()
                .find_map(|o| o.err())
                .map(|e| e.to_string())
                .unwrap_or_default();
            Err(Error::AllRunsFailed { runs, first })
        }
    }
}
