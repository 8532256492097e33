//! Oblivious sketches (CountSketch, Gaussian, and their composition) and
//! leverage-score sampling-and-rescaling operators.
//!
//! Every transform is a pure function of its shape and seed. Applying a
//! CountSketch or a sampler touches each stored nonzero of the operand once;
//! the `*_with_work` variants report that multiply-add count.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{svd, DenseMatrix, Matrix, SparseMatrix, DEFAULT_RANK_TOL};
use crate::rng;

/// Rank threshold (relative, on singular values) for the Gram route used on sparse input.
/// Squaring the matrix loses half the digits, so this is looser than [`DEFAULT_RANK_TOL`].
pub const GRAM_RANK_TOL: f64 = 1e-7;

/// CountSketch `S = Phi D`: source index `i` lands in bucket `h(i)` with sign `sigma(i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CountSketchTransform {
    target_rows: usize,
    buckets: Vec<usize>,
    signs: Vec<f64>,
    seed: Option<u64>,
}

impl CountSketchTransform {
    pub fn new(target_rows: usize, source_dim: usize, seed: u64) -> Result<Self> {
        if target_rows == 0 {
            return Err(Error::InvalidArgument("CountSketch needs at least one row".into()));
        }
        let mut rng = rng::stream(seed, "countsketch");
        let mut buckets = Vec::with_capacity(source_dim);
        let mut signs = Vec::with_capacity(source_dim);
        for _ in 0..source_dim {
            buckets.push(rng.gen_range(0..target_rows));
            signs.push(if rng.gen::<bool>() { 1.0 } else { -1.0 });
        }
        Ok(Self {
            target_rows,
            buckets,
            signs,
            seed: Some(seed),
        })
    }

    /// An explicit hash; signs must be +1 or -1.
    pub fn from_parts(target_rows: usize, buckets: Vec<usize>, signs: Vec<f64>) -> Result<Self> {
        if buckets.len() != signs.len() {
            return Err(Error::InvalidArgument("bucket and sign maps differ in length".into()));
        }
        if buckets.iter().any(|&b| b >= target_rows) {
            return Err(Error::InvalidArgument("bucket index out of range".into()));
        }
        if signs.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::InvalidArgument("signs must be +1 or -1".into()));
        }
        Ok(Self {
            target_rows,
            buckets,
            signs,
            seed: None,
        })
    }

    /// Identity-shaped sketch: bucket `i` for index `i`, all signs positive.
    pub fn identity(n: usize) -> Self {
        Self {
            target_rows: n,
            buckets: (0..n).collect(),
            signs: vec![1.0; n],
            seed: None,
        }
    }

    pub fn target_rows(&self) -> usize {
        self.target_rows
    }

    pub fn source_dim(&self) -> usize {
        self.buckets.len()
    }

    pub fn bucket_of(&self, i: usize) -> usize {
        self.buckets[i]
    }

    pub fn sign_of(&self, i: usize) -> f64 {
        self.signs[i]
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// The explicit `target_rows x source_dim` matrix.
    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.target_rows, self.source_dim());
        for (i, (&b, &s)) in self.buckets.iter().zip(&self.signs).enumerate() {
            out[(b, i)] = s;
        }
        out
    }

    pub fn apply_left(&self, m: &Matrix) -> Result<DenseMatrix> {
        self.apply_left_with_work(m).map(|(out, _)| out)
    }

    /// `S M`; row `j` of the result is the signed sum of the rows hashed to `j`.
    pub fn apply_left_with_work(&self, m: &Matrix) -> Result<(DenseMatrix, usize)> {
        if m.rows() != self.source_dim() {
            return Err(Error::dim(
                "countsketch apply_left",
                (self.target_rows, self.source_dim()),
                m.shape(),
            ));
        }
        let mut out = DenseMatrix::zeros(self.target_rows, m.cols());
        let mut work = 0;
        for i in 0..m.rows() {
            let sign = self.signs[i];
            let row = out.row_mut(self.buckets[i]);
            m.for_each_in_row(i, |j, v| {
                row[j] += sign * v;
                work += 1;
            });
        }
        Ok((out, work))
    }

    /// `M S^T`; sketches the columns of `M`.
    pub fn apply_right_transpose(&self, m: &Matrix) -> Result<DenseMatrix> {
        if m.cols() != self.source_dim() {
            return Err(Error::dim(
                "countsketch apply_right_transpose",
                m.shape(),
                (self.target_rows, self.source_dim()),
            ));
        }
        let mut out = DenseMatrix::zeros(m.rows(), self.target_rows);
        for i in 0..m.rows() {
            let row = out.row_mut(i);
            m.for_each_in_row(i, |j, v| row[self.buckets[j]] += self.signs[j] * v);
        }
        Ok(out)
    }
}

/// Dense Gaussian sketch with i.i.d. N(0, 1/m) entries.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianTransform {
    entries: DenseMatrix,
    seed: u64,
}

impl GaussianTransform {
    pub fn new(target_rows: usize, source_dim: usize, seed: u64) -> Result<Self> {
        if target_rows == 0 {
            return Err(Error::InvalidArgument("Gaussian sketch needs at least one row".into()));
        }
        let mut rng = rng::stream(seed, "gaussian");
        let scale = 1.0 / (target_rows as f64).sqrt();
        let entries = DenseMatrix::from_fn(target_rows, source_dim, |_, _| {
            let z: f64 = rng.sample(StandardNormal);
            z * scale
        });
        Ok(Self { entries, seed })
    }

    pub fn target_rows(&self) -> usize {
        self.entries.rows()
    }

    pub fn source_dim(&self) -> usize {
        self.entries.cols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entries(&self) -> &DenseMatrix {
        &self.entries
    }

    pub fn apply_left(&self, m: &Matrix) -> Result<DenseMatrix> {
        self.apply_left_with_work(m).map(|(out, _)| out)
    }

    pub fn apply_left_with_work(&self, m: &Matrix) -> Result<(DenseMatrix, usize)> {
        if m.rows() != self.source_dim() {
            return Err(Error::dim("gaussian apply_left", self.entries.shape(), m.shape()));
        }
        match m {
            Matrix::Dense(d) => {
                let work = self.target_rows() * d.rows() * d.cols();
                Ok((self.entries.matmul(d)?, work))
            }
            Matrix::Sparse(s) => {
                let mut out = DenseMatrix::zeros(self.target_rows(), s.cols());
                for r in 0..self.target_rows() {
                    let g = self.entries.row(r);
                    let out_row = out.row_mut(r);
                    for (i, &gi) in g.iter().enumerate() {
                        let (cols, vals) = s.row(i);
                        for (&j, &v) in cols.iter().zip(vals) {
                            out_row[j] += gi * v;
                        }
                    }
                }
                Ok((out, self.target_rows() * s.nnz()))
            }
        }
    }
}

/// `G Pi`: a CountSketch to `t` rows followed by a Gaussian to `m` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CombinedTransform {
    inner: CountSketchTransform,
    outer: GaussianTransform,
}

impl CombinedTransform {
    pub fn new(target_rows: usize, inner_rows: usize, source_dim: usize, seed: u64) -> Result<Self> {
        let inner = CountSketchTransform::new(inner_rows, source_dim, rng::labeled_seed(seed, "inner"))?;
        let outer = GaussianTransform::new(target_rows, inner_rows, rng::labeled_seed(seed, "outer"))?;
        Self::from_parts(inner, outer)
    }

    pub fn from_parts(inner: CountSketchTransform, outer: GaussianTransform) -> Result<Self> {
        if inner.target_rows() != outer.source_dim() {
            return Err(Error::dim(
                "combined transform",
                (inner.target_rows(), inner.source_dim()),
                (outer.target_rows(), outer.source_dim()),
            ));
        }
        Ok(Self { inner, outer })
    }

    pub fn inner(&self) -> &CountSketchTransform {
        &self.inner
    }

    pub fn outer(&self) -> &GaussianTransform {
        &self.outer
    }

    pub fn target_rows(&self) -> usize {
        self.outer.target_rows()
    }

    pub fn source_dim(&self) -> usize {
        self.inner.source_dim()
    }

    pub fn apply_left(&self, m: &Matrix) -> Result<DenseMatrix> {
        self.apply_left_with_work(m).map(|(out, _)| out)
    }

    pub fn apply_left_with_work(&self, m: &Matrix) -> Result<(DenseMatrix, usize)> {
        let (mid, w1) = self.inner.apply_left_with_work(m)?;
        let (out, w2) = self.outer.apply_left_with_work(&Matrix::Dense(mid))?;
        Ok((out, w1 + w2))
    }
}

/// Leverage scores of the rows of `m`: squared row norms of an orthonormal
/// basis of the column span, divided by the rank, so they sum to one.
///
/// Dense input goes through a thin SVD. Sparse input goes through the
/// eigendecomposition of the Gram matrix, which keeps the work proportional to
/// `nnz(m)` times the rank.
pub fn leverage_scores(m: &Matrix) -> Result<Vec<f64>> {
    let scores = match m {
        Matrix::Dense(d) => dense_leverage(d)?,
        Matrix::Sparse(s) => sparse_leverage(s)?,
    };
    let total: f64 = scores.iter().sum();
    Ok(scores.into_iter().map(|p| p / total).collect())
}

fn degenerate() -> Error {
    Error::Degenerate("leverage scores of a zero matrix".into())
}

fn dense_leverage(d: &DenseMatrix) -> Result<Vec<f64>> {
    let f = svd(d)?;
    let k = f.rank(DEFAULT_RANK_TOL);
    if k == 0 {
        return Err(degenerate());
    }
    let u = f.u_k(k);
    Ok((0..u.rows())
        .map(|i| u.row(i).iter().map(|x| x * x).sum::<f64>() / k as f64)
        .collect())
}

fn sparse_leverage(s: &SparseMatrix) -> Result<Vec<f64>> {
    let n = s.cols();
    let mut gram = DMatrix::<f64>::zeros(n, n);
    for i in 0..s.rows() {
        let (cols, vals) = s.row(i);
        for (a, (&ja, &va)) in cols.iter().zip(vals).enumerate() {
            for (&jb, &vb) in cols[a..].iter().zip(&vals[a..]) {
                gram[(ja, jb)] += va * vb;
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    let eig = SymmetricEigen::new(gram);
    let lmax = eig.eigenvalues.iter().fold(0.0_f64, |acc, &l| acc.max(l));
    if lmax <= 0.0 {
        return Err(degenerate());
    }
    let cut = (GRAM_RANK_TOL * GRAM_RANK_TOL) * lmax;
    let kept: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > cut).collect();
    let k = kept.len();
    // W = V_k diag(lambda_k)^{-1/2}, so that s * W has orthonormal columns.
    let w = DenseMatrix::from_fn(n, k, |i, c| {
        eig.eigenvectors[(i, kept[c])] / eig.eigenvalues[kept[c]].sqrt()
    });
    let mut scores = Vec::with_capacity(s.rows());
    let mut acc = vec![0.0; k];
    for i in 0..s.rows() {
        acc.iter_mut().for_each(|a| *a = 0.0);
        let (cols, vals) = s.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            for (a, wv) in acc.iter_mut().zip(w.row(j)) {
                *a += v * wv;
            }
        }
        scores.push(acc.iter().map(|a| a * a).sum::<f64>() / k as f64);
    }
    Ok(scores)
}

/// Sampling-and-rescaling operator `R` (s x n): row `j` of `R M` is
/// `M[i_j] / sqrt(q_{i_j} s)` with `i_j` drawn i.i.d. from `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct LeverageSampler {
    source_dim: usize,
    indices: Vec<usize>,
    probabilities: Vec<f64>,
    weights: Vec<f64>,
    beta: f64,
    seed: Option<u64>,
}

impl LeverageSampler {
    /// Draws `s` indices from `q = beta * p + (1 - beta) * uniform(support of p)`,
    /// which satisfies `q_i >= beta * p_i` and never samples a zero-score index.
    pub fn from_scores(scores: &[f64], s: usize, beta: f64, seed: u64) -> Result<Self> {
        if s == 0 {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidArgument(format!("beta must lie in (0, 1], got {beta}")));
        }
        let total: f64 = scores.iter().sum();
        if !(total > 0.0) || scores.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::Degenerate("sampling scores must be nonnegative with positive sum".into()));
        }
        let support = scores.iter().filter(|&&p| p > 0.0).count() as f64;
        let probabilities: Vec<f64> = scores
            .iter()
            .map(|&p| {
                if p > 0.0 {
                    beta * p / total + (1.0 - beta) / support
                } else {
                    0.0
                }
            })
            .collect();
        let dist = WeightedIndex::new(&probabilities)
            .map_err(|e| Error::Degenerate(format!("sampling distribution: {e}")))?;
        let mut rng = rng::stream(seed, "leverage-sampler");
        let indices: Vec<usize> = (0..s).map(|_| dist.sample(&mut rng)).collect();
        let mut sampler = Self::from_parts(scores.len(), indices, probabilities)?;
        sampler.beta = beta;
        sampler.seed = Some(seed);
        Ok(sampler)
    }

    /// A sampler with explicit draws; weights follow from `q` and the draw count.
    pub fn from_parts(source_dim: usize, indices: Vec<usize>, probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.len() != source_dim {
            return Err(Error::InvalidArgument("probability vector length differs from source dimension".into()));
        }
        if indices.is_empty() {
            return Err(Error::InvalidArgument("sample count must be at least 1".into()));
        }
        let s = indices.len() as f64;
        let mut weights = Vec::with_capacity(indices.len());
        for &i in &indices {
            let q = *probabilities
                .get(i)
                .ok_or_else(|| Error::InvalidArgument(format!("sampled index {i} out of range")))?;
            if !(q > 0.0) {
                return Err(Error::InvalidArgument(format!("sampled index {i} has zero probability")));
            }
            weights.push(1.0 / (q * s).sqrt());
        }
        Ok(Self {
            source_dim,
            indices,
            probabilities,
            weights,
            beta: 1.0,
            seed: None,
        })
    }

    pub fn source_dim(&self) -> usize {
        self.source_dim
    }

    pub fn sample_count(&self) -> usize {
        self.indices.len()
    }

    pub fn sampled_indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn rescale_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    /// The explicit `s x n` operator.
    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.sample_count(), self.source_dim);
        for (j, (&i, &w)) in self.indices.iter().zip(&self.weights).enumerate() {
            out[(j, i)] = w;
        }
        out
    }

    pub fn apply_left(&self, m: &Matrix) -> Result<DenseMatrix> {
        self.apply_left_with_work(m).map(|(out, _)| out)
    }

    pub fn apply_left_with_work(&self, m: &Matrix) -> Result<(DenseMatrix, usize)> {
        if m.rows() != self.source_dim {
            return Err(Error::dim(
                "sampler apply_left",
                (self.sample_count(), self.source_dim),
                m.shape(),
            ));
        }
        let mut out = DenseMatrix::zeros(self.sample_count(), m.cols());
        let mut work = 0;
        for (j, (&i, &w)) in self.indices.iter().zip(&self.weights).enumerate() {
            let row = out.row_mut(j);
            m.for_each_in_row(i, |c, v| {
                row[c] = w * v;
                work += 1;
            });
        }
        Ok((out, work))
    }

    /// `M R^T`: samples and rescales columns of `M`, keeping its storage form.
    pub fn apply_columns(&self, m: &Matrix) -> Result<Matrix> {
        self.apply_columns_with_work(m).map(|(out, _)| out)
    }

    pub fn apply_columns_with_work(&self, m: &Matrix) -> Result<(Matrix, usize)> {
        if m.cols() != self.source_dim {
            return Err(Error::dim(
                "sampler apply_columns",
                m.shape(),
                (self.sample_count(), self.source_dim),
            ));
        }
        // source column -> output slots that draw it
        let mut slots: Vec<Vec<usize>> = vec![Vec::new(); self.source_dim];
        for (j, &i) in self.indices.iter().enumerate() {
            slots[i].push(j);
        }
        let mut work = 0;
        match m {
            Matrix::Dense(d) => {
                let mut out = DenseMatrix::zeros(d.rows(), self.sample_count());
                for r in 0..d.rows() {
                    let src = d.row(r);
                    let dst = out.row_mut(r);
                    for (j, (&i, &w)) in self.indices.iter().zip(&self.weights).enumerate() {
                        dst[j] = w * src[i];
                    }
                    work += self.sample_count();
                }
                Ok((Matrix::Dense(out), work))
            }
            Matrix::Sparse(s) => {
                let mut triplets = Vec::new();
                for r in 0..s.rows() {
                    let (cols, vals) = s.row(r);
                    for (&c, &v) in cols.iter().zip(vals) {
                        for &j in &slots[c] {
                            triplets.push((r, j, self.weights[j] * v));
                            work += 1;
                        }
                    }
                }
                let out = SparseMatrix::from_triplets(s.rows(), self.sample_count(), &triplets)?;
                Ok((Matrix::Sparse(out), work))
            }
        }
    }
}

/// Samples `s` rows of `m` by its leverage scores.
pub fn build_row_sampler(m: &Matrix, s: usize, beta: f64, seed: u64) -> Result<LeverageSampler> {
    let scores = leverage_scores(m)?;
    LeverageSampler::from_scores(&scores, s, beta, seed)
}

/// Which transform fills a sketching slot of a pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SketchKind {
    CountSketch,
    Gaussian,
    Leverage,
}

/// A row-reducing transform of any kind.
#[derive(Clone, Debug)]
pub enum RowSketch {
    CountSketch(CountSketchTransform),
    Gaussian(GaussianTransform),
    Combined(CombinedTransform),
    Leverage(LeverageSampler),
}

impl RowSketch {
    /// Builds a `rows x m.rows()` transform of the given kind for `m`.
    pub fn build(kind: SketchKind, rows: usize, m: &Matrix, seed: u64) -> Result<Self> {
        Ok(match kind {
            SketchKind::CountSketch => RowSketch::CountSketch(CountSketchTransform::new(rows, m.rows(), seed)?),
            SketchKind::Gaussian => RowSketch::Gaussian(GaussianTransform::new(rows, m.rows(), seed)?),
            SketchKind::Leverage => RowSketch::Leverage(build_row_sampler(m, rows, 1.0, seed)?),
        })
    }

    pub fn target_rows(&self) -> usize {
        match self {
            RowSketch::CountSketch(t) => t.target_rows(),
            RowSketch::Gaussian(t) => t.target_rows(),
            RowSketch::Combined(t) => t.target_rows(),
            RowSketch::Leverage(t) => t.sample_count(),
        }
    }

    pub fn apply_left_with_work(&self, m: &Matrix) -> Result<(DenseMatrix, usize)> {
        match self {
            RowSketch::CountSketch(t) => t.apply_left_with_work(m),
            RowSketch::Gaussian(t) => t.apply_left_with_work(m),
            RowSketch::Combined(t) => t.apply_left_with_work(m),
            RowSketch::Leverage(t) => t.apply_left_with_work(m),
        }
    }

    pub fn apply_left(&self, m: &Matrix) -> Result<DenseMatrix> {
        self.apply_left_with_work(m).map(|(out, _)| out)
    }
}
