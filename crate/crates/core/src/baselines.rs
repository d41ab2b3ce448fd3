//! Reference selectors: uniform stride, top-K relevance, and greedy MAP
//! inference for a relevance-weighted determinantal point process.

use crate::embedding::{dot, EmbeddingMatrix, QueryVector};
use crate::error::{Error, Result};
use crate::exact::check_k;
use crate::scoring::{relevance_scores, RelevanceVector};

/// Diagonal jitter added to the DPP kernel.
pub const DPP_JITTER: f64 = 1e-9;
/// Pivots below `-PSD_TOLERANCE` mean the kernel is indefinite.
const PSD_TOLERANCE: f64 = 1e-6;
/// Items whose residual variance falls below this fraction of their diagonal
/// entry lie in the span of the picks; they are chosen only as a last resort.
const DEPENDENCE_TOLERANCE: f64 = 1e-6;

/// Center-of-strata uniform sampling: `floor(m n / k) + floor(n / 2k)`.
pub fn uniform_select(n: usize, k: usize) -> Result<Vec<usize>> {
    check_k(k, n)?;
    let offset = n / (2 * k);
    Ok((0..k)
        .map(|m| (m * n / k + offset).min(n - 1))
        .collect())
}

/// The `k` most relevant frames, ties to the lower index, sorted ascending.
pub fn topk_select(relevance: &RelevanceVector, k: usize) -> Result<Vec<usize>> {
    let scores = relevance.scores();
    check_k(k, scores.len())?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut picked = order[..k].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Relevance clamped at zero, the per-item quality of the DPP.
fn quality(relevance: &RelevanceVector) -> Vec<f64> {
    relevance.scores().iter().map(|&r| r.max(0.0)).collect()
}

/// Dense DPP kernel `L[i][j] = r_i r_j <f_i, f_j>`, `L[i][i] = r_i^2 + jitter`,
/// with `r` the relevance clamped at zero. Row-major.
pub fn dpp_kernel(e: &EmbeddingMatrix, q: &QueryVector) -> Result<Vec<f64>> {
    let r = quality(&relevance_scores(e, q)?);
    let n = e.n_frames();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            l[i * n + j] = kernel_entry(e, &r, i, j);
        }
    }
    Ok(l)
}

fn kernel_entry(e: &EmbeddingMatrix, r: &[f64], i: usize, j: usize) -> f64 {
    if i == j {
        r[i] * r[i] + DPP_JITTER
    } else {
        r[i] * r[j] * dot(e.row(i), e.row(j))
    }
}

/// Greedy MAP: repeatedly add the item with the largest marginal gain in
/// `log det L_Y`, maintained by incremental Cholesky updates.
pub fn dpp_greedy_select(e: &EmbeddingMatrix, q: &QueryVector, k: usize) -> Result<Vec<usize>> {
    let r = quality(&relevance_scores(e, q)?);
    dpp_greedy_map(e.n_frames(), k, |i, j| kernel_entry(e, &r, i, j))
}

/// Greedy MAP over an arbitrary kernel given entry-wise. Returns sorted
/// indices.
pub fn dpp_greedy_map(
    n: usize,
    k: usize,
    kernel: impl Fn(usize, usize) -> f64,
) -> Result<Vec<usize>> {
    check_k(k, n)?;
    // Residual variances d_i^2 and Cholesky rows c_i.
    let diagonal: Vec<f64> = (0..n).map(|i| kernel(i, i)).collect();
    let mut residual = diagonal.clone();
    let mut factors: Vec<Vec<f64>> = vec![Vec::with_capacity(k); n];
    let mut selected = vec![false; n];
    let mut picks = Vec::with_capacity(k);

    for step in 0..k {
        // Ranked by (independent of the picks, residual), lowest index on ties.
        let independent = |i: usize| residual[i] > DEPENDENCE_TOLERANCE * diagonal[i].abs();
        let mut best: Option<usize> = None;
        for i in 0..n {
            if selected[i] {
                continue;
            }
            let better = best.is_none_or(|b| {
                (independent(i), residual[i]).partial_cmp(&(independent(b), residual[b]))
                    == Some(std::cmp::Ordering::Greater)
            });
            if better {
                best = Some(i);
            }
        }
        let j = best.expect("k <= n leaves an unselected item");
        let pivot = residual[j];
        if pivot < -PSD_TOLERANCE {
            return Err(Error::KernelNotPsd(pivot));
        }
        selected[j] = true;
        picks.push(j);
        if step + 1 == k {
            break;
        }
        let scale = if pivot > 0.0 { pivot.sqrt() } else { 0.0 };
        let cj = factors[j].clone();
        for i in 0..n {
            if selected[i] {
                continue;
            }
            let ei = if scale > 0.0 {
                let proj: f64 = cj.iter().zip(&factors[i]).map(|(a, b)| a * b).sum();
                (kernel(j, i) - proj) / scale
            } else {
                0.0
            };
            factors[i].push(ei);
            residual[i] -= ei * ei;
        }
    }
    picks.sort_unstable();
    Ok(picks)
}
