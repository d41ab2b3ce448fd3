//! Relevance/diversity score matrices and the quadratic selection objective.
//!
//! For normalized frame embeddings `f_i` and query `q`:
//!
//! ```text
//! relevance(i)    = <f_i, q>
//! diversity(i, j) = exp(-<f_i, f_j>)                       in [e^-1, e]
//! asymmetric      S[i][j] = relevance(i) + alpha * diversity(i, j)   (i < j, else 0)
//! symmetric       S[i][j] = relevance(i) + 2 alpha diversity(i, j) + relevance(j)
//! objective(Y)    = x^T S x   for the 0/1 indicator x of Y
//! ```
//!
//! The greedy solver works on a truncated-SVD approximation of `S`, sampled
//! on a uniform grid; both transforms live here.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::svd::{svd, svd_scratch, ComputeSvdVectors};
use faer::diag::Diag;
use faer::{Mat, Par};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{dot, EmbeddingMatrix, QueryVector};
use crate::error::{Error, Result};

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_RANK_RATIO: f64 = 0.25;
pub const DEFAULT_TARGET_RESOLUTION: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Pair scores stored above the diagonal only; the earlier frame carries
    /// the relevance term.
    AsymmetricUpper,
    /// Both frames' relevance on every pair, mirrored across the diagonal.
    Symmetric,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::AsymmetricUpper => "asymmetric-upper",
            Variant::Symmetric => "symmetric",
        }
    }
}

/// Per-frame cosine similarity to the query.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceVector {
    scores: Vec<f64>,
}

impl RelevanceVector {
    pub fn new(scores: Vec<f64>) -> Self {
        Self { scores }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Index of the largest score, lowest index on ties.
    pub fn argmax(&self) -> Option<usize> {
        argmax_low(self.scores.iter().copied())
    }
}

/// First index of the maximum; NaN never wins.
pub(crate) fn argmax_low(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        match best {
            Some((_, b)) if !(v > b) => {}
            _ if v.is_nan() => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Dense `n x n` pair-score matrix, row-major.
///
/// Matrices built from embeddings or through [`ScoreMatrix::from_values`]
/// satisfy their variant's structure (zero lower triangle, or symmetric with
/// zero diagonal). [`low_rank_approx`] keeps the variant tag but returns a
/// dense approximation that generally violates it.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    n: usize,
    variant: Variant,
    alpha: f64,
    values: Vec<f64>,
    relevance: Option<RelevanceVector>,
}

impl ScoreMatrix {
    /// Wraps explicit values after checking the variant's structure.
    pub fn from_values(n: usize, variant: Variant, alpha: f64, values: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::DimZero);
        }
        if values.len() != n * n {
            return Err(Error::DimMismatch {
                expected: n * n,
                found: values.len(),
            });
        }
        if !(alpha >= 0.0) {
            return Err(Error::NegativeAlpha(alpha));
        }
        for i in 0..n {
            for j in 0..=i {
                let (lower, upper) = (values[i * n + j], values[j * n + i]);
                let ok = match variant {
                    Variant::AsymmetricUpper => lower == 0.0,
                    Variant::Symmetric if i == j => lower == 0.0,
                    Variant::Symmetric => lower == upper,
                };
                if !ok {
                    return Err(Error::Structure(format!(
                        "{} entry ({i}, {j}) = {lower}",
                        variant.as_str()
                    )));
                }
            }
        }
        Ok(Self {
            n,
            variant,
            alpha,
            values,
            relevance: None,
        })
    }

    /// Attaches the relevance vector used for the single-frame selection rule.
    pub fn with_relevance(mut self, relevance: RelevanceVector) -> Result<Self> {
        if relevance.len() != self.n {
            return Err(Error::DimMismatch {
                expected: self.n,
                found: relevance.len(),
            });
        }
        self.relevance = Some(relevance);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn relevance(&self) -> Option<&RelevanceVector> {
        self.relevance.as_ref()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    /// `S[a][b] + S[b][a]`: the weight the pair contributes to `x^T S x`.
    #[inline]
    pub fn pair_score(&self, a: usize, b: usize) -> f64 {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.get(lo, hi) + self.get(hi, lo)
    }

    /// Frobenius norm of `self - other`.
    pub fn frobenius_distance(&self, other: &ScoreMatrix) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Evaluates `x^T S x` for the indicator of `indices`.
    pub fn objective(&self, indices: &[usize]) -> Result<f64> {
        check_index_set(indices, self.n)?;
        Ok(self.objective_unchecked(indices))
    }

    pub(crate) fn objective_unchecked(&self, indices: &[usize]) -> f64 {
        let mut total = 0.0;
        for &a in indices {
            let row = self.row(a);
            for &b in indices {
                total += row[b];
            }
        }
        total
    }
}

pub(crate) fn check_index_set(indices: &[usize], n: usize) -> Result<()> {
    for (pos, &i) in indices.iter().enumerate() {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        if pos > 0 {
            let prev = indices[pos - 1];
            if prev == i {
                return Err(Error::DuplicateIndex(i));
            }
            if prev > i {
                return Err(Error::Unsorted);
            }
        }
    }
    Ok(())
}

/// Free-function form of [`ScoreMatrix::objective`].
pub fn objective(s: &ScoreMatrix, indices: &[usize]) -> Result<f64> {
    s.objective(indices)
}

fn require_normalized(e: &EmbeddingMatrix, q: &QueryVector) -> Result<()> {
    if e.dim() != q.dim() {
        return Err(Error::DimMismatch {
            expected: e.dim(),
            found: q.dim(),
        });
    }
    if !e.is_normalized() || !q.is_normalized() {
        return Err(Error::NotNormalized);
    }
    Ok(())
}

pub fn relevance_scores(e: &EmbeddingMatrix, q: &QueryVector) -> Result<RelevanceVector> {
    require_normalized(e, q)?;
    Ok(RelevanceVector::new(
        e.rows().map(|row| dot(row, q.data())).collect(),
    ))
}

pub fn diversity_score(e: &EmbeddingMatrix, i: usize, j: usize) -> Result<f64> {
    let n = e.n_frames();
    for idx in [i, j] {
        if idx >= n {
            return Err(Error::IndexOutOfRange { index: idx, n });
        }
    }
    if i == j {
        return Err(Error::SameIndex(i));
    }
    if !e.is_normalized() {
        return Err(Error::NotNormalized);
    }
    Ok((-e.similarity(i, j)).exp())
}

pub fn build_score_matrix(
    e: &EmbeddingMatrix,
    q: &QueryVector,
    alpha: f64,
    variant: Variant,
) -> Result<ScoreMatrix> {
    if !(alpha >= 0.0) {
        return Err(Error::NegativeAlpha(alpha));
    }
    let relevance = relevance_scores(e, q)?;
    let n = e.n_frames();
    let rel = relevance.scores();

    let mut values = vec![0.0; n * n];
    values.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let fi = e.row(i);
        for (j, cell) in row.iter_mut().enumerate().skip(i + 1) {
            let diversity = (-dot(fi, e.row(j))).exp();
            *cell = match variant {
                Variant::AsymmetricUpper => rel[i] + alpha * diversity,
                Variant::Symmetric => rel[i] + 2.0 * alpha * diversity + rel[j],
            };
        }
    });
    if variant == Variant::Symmetric {
        for i in 0..n {
            for j in 0..i {
                values[i * n + j] = values[j * n + i];
            }
        }
    }

    Ok(ScoreMatrix {
        n,
        variant,
        alpha,
        values,
        relevance: Some(relevance),
    })
}

/// Default retained rank for `n` frames: `max(1, floor(ratio * n))`.
pub fn rank_for(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).floor() as usize).clamp(1, n.max(1))
}

/// Best rank-`r` approximation of `S` in Frobenius norm (truncated SVD).
pub fn low_rank_approx(s: &ScoreMatrix, r: usize) -> Result<ScoreMatrix> {
    let n = s.n;
    if r == 0 || r > n {
        return Err(Error::RankOutOfRange { rank: r, n });
    }
    let dense = Mat::from_fn(n, n, |i, j| s.values[i * n + j]);
    let mut u = Mat::<f64>::zeros(n, n);
    let mut v = Mat::<f64>::zeros(n, n);
    let mut sigma = Diag::<f64>::zeros(n);
    // Sequential on purpose: the result must not depend on the thread count.
    let par = Par::Seq;
    let full = ComputeSvdVectors::Full;
    let mut scratch = MemBuffer::new(svd_scratch::<f64>(n, n, full, full, par, Default::default()));
    svd(
        dense.as_ref(),
        sigma.as_mut(),
        Some(u.as_mut()),
        Some(v.as_mut()),
        par,
        MemStack::new(&mut scratch),
        Default::default(),
    )
    .map_err(|_| Error::SvdNoConvergence)?;

    let sigma = sigma.column_vector();
    let scaled_u = Mat::from_fn(n, r, |i, l| u[(i, l)] * sigma[l]);
    let approx = scaled_u * v.subcols(0, r).transpose();

    let mut values = Vec::with_capacity(n * n);
    for i in 0..n {
        values.extend((0..n).map(|j| approx[(i, j)]));
    }
    Ok(ScoreMatrix {
        n,
        variant: s.variant,
        alpha: s.alpha,
        values,
        relevance: s.relevance.clone(),
    })
}

/// A score matrix sampled on a uniform grid of original frame indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DownsampledMatrix {
    grid: Vec<usize>,
    values: Vec<f64>,
    source_n: usize,
}

impl DownsampledMatrix {
    pub fn grid(&self) -> &[usize] {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn source_n(&self) -> usize {
        self.source_n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.grid.len() + b]
    }
}

/// Grid positions `floor(m * n / T)` for `m = 0..T`, `T = min(n, target)`.
pub fn downsample_grid(n: usize, target_resolution: usize) -> Vec<usize> {
    let t = n.min(target_resolution);
    (0..t)
        .map(|m| ((m as u128 * n as u128) / t as u128) as usize)
        .collect()
}

pub fn downsample(s_r: &ScoreMatrix, target_resolution: usize) -> Result<DownsampledMatrix> {
    if target_resolution < 2 {
        return Err(Error::ResolutionTooSmall(target_resolution));
    }
    let grid = downsample_grid(s_r.n, target_resolution);
    let mut values = Vec::with_capacity(grid.len() * grid.len());
    for &gi in &grid {
        let row = s_r.row(gi);
        values.extend(grid.iter().map(|&gj| row[gj]));
    }
    Ok(DownsampledMatrix {
        grid,
        values,
        source_n: s_r.n,
    })
}
