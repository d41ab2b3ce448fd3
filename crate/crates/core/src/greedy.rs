//! Greedy keyframe search over a denoised, downsampled score matrix.
//!
//! 1. Truncated SVD of `S` keeps the top `r` singular values (`S_r`).
//! 2. `S_r` is sampled on a uniform grid of at most `target_resolution` frames.
//! 3. Start from the most query-relevant grid frame, then repeatedly add the
//!    grid frame with the highest cumulative pair score against the picks.
//! 4. Each pick may move to a full-resolution neighbour within
//!    `refine_window_k` frames if that strictly raises its cumulative score
//!    under `S_r`.
//!
//! Pair scores are read as `m[a][b] + m[b][a]`: the dense low-rank matrix
//! carries mass on both triangles, and for an exactly upper-triangular matrix
//! the sum reduces to the stored entry.

use std::borrow::Cow;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMatrix, QueryVector};
use crate::error::{Error, Result};
use crate::exact::{check_k, elapsed_ns, single_frame, SelectionResult, Solver, SolverStats};
use crate::scoring::{
    build_score_matrix, downsample, low_rank_approx, rank_for, DownsampledMatrix,
    RelevanceVector, ScoreMatrix, Variant, DEFAULT_RANK_RATIO, DEFAULT_TARGET_RESOLUTION,
};

pub const DEFAULT_REFINE_WINDOW: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GreedyConfig {
    pub rank_ratio: f64,
    pub target_resolution: usize,
    pub refine_window_k: usize,
    pub enable_lowrank: bool,
    pub enable_downsample: bool,
    pub enable_refine: bool,
    /// Start from the most relevant frame; otherwise from frame 0.
    pub enable_init: bool,
}

impl Default for GreedyConfig {
    fn default() -> Self {
        Self {
            rank_ratio: DEFAULT_RANK_RATIO,
            target_resolution: DEFAULT_TARGET_RESOLUTION,
            refine_window_k: DEFAULT_REFINE_WINDOW,
            enable_lowrank: true,
            enable_downsample: true,
            enable_refine: true,
            enable_init: true,
        }
    }
}

impl GreedyConfig {
    /// Plain cumulative-score greedy on the raw matrix, starting at frame 0.
    pub fn vanilla() -> Self {
        Self {
            enable_lowrank: false,
            enable_downsample: false,
            enable_refine: false,
            enable_init: false,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rank_ratio > 0.0 && self.rank_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "rank ratio {} outside (0, 1]",
                self.rank_ratio
            )));
        }
        if self.target_resolution < 2 {
            return Err(Error::ResolutionTooSmall(self.target_resolution));
        }
        Ok(())
    }
}

/// A candidate space the greedy step can search: `len()` candidates, each
/// standing for an original frame.
pub trait CandidateGrid {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Symmetrized pair score between candidates `a` and `b`.
    fn pair(&self, a: usize, b: usize) -> f64;

    /// Original frame index of candidate `a`.
    fn origin(&self, a: usize) -> usize;
}

impl CandidateGrid for ScoreMatrix {
    fn len(&self) -> usize {
        self.n()
    }

    fn pair(&self, a: usize, b: usize) -> f64 {
        self.pair_score(a, b)
    }

    fn origin(&self, a: usize) -> usize {
        a
    }
}

impl CandidateGrid for DownsampledMatrix {
    fn len(&self) -> usize {
        DownsampledMatrix::len(self)
    }

    fn pair(&self, a: usize, b: usize) -> f64 {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        self.get(lo, hi) + self.get(hi, lo)
    }

    fn origin(&self, a: usize) -> usize {
        self.grid()[a]
    }
}

/// Relevance-initialized cumulative-score greedy. Returns candidate indices
/// in acquisition order.
pub fn greedy_core<G: CandidateGrid + ?Sized>(
    m: &G,
    relevance: &RelevanceVector,
    k: usize,
) -> Result<Vec<usize>> {
    let scores = relevance.scores();
    for a in 0..m.len() {
        if m.origin(a) >= scores.len() {
            return Err(Error::DimMismatch {
                expected: m.origin(a) + 1,
                found: scores.len(),
            });
        }
    }
    let start = crate::scoring::argmax_low((0..m.len()).map(|a| scores[m.origin(a)]));
    greedy_core_from(m, start.unwrap_or(0), k)
}

/// Cumulative-score greedy from a fixed starting candidate.
pub fn greedy_core_from<G: CandidateGrid + ?Sized>(
    m: &G,
    start: usize,
    k: usize,
) -> Result<Vec<usize>> {
    let t = m.len();
    check_k(k, t)?;
    if start >= t {
        return Err(Error::IndexOutOfRange { index: start, n: t });
    }
    let mut picked = vec![false; t];
    let mut cumulative = vec![0.0; t];
    let mut order = Vec::with_capacity(k);

    let mut add = |c: usize, picked: &mut [bool], cumulative: &mut [f64]| {
        picked[c] = true;
        order.push(c);
        for (j, acc) in cumulative.iter_mut().enumerate() {
            *acc += m.pair(c, j);
        }
    };
    add(start, &mut picked, &mut cumulative);
    for _ in 1..k {
        let mut best: Option<(usize, f64)> = None;
        for (j, &score) in cumulative.iter().enumerate() {
            if picked[j] || score.is_nan() {
                continue;
            }
            if best.is_none_or(|(_, b)| score > b) {
                best = Some((j, score));
            }
        }
        // k <= t guarantees an unpicked candidate; NaN rows fall back to the
        // lowest unpicked index.
        let next = best.map_or_else(|| picked.iter().position(|p| !p).unwrap(), |(j, _)| j);
        add(next, &mut picked, &mut cumulative);
    }
    Ok(order)
}

/// One accepted refinement move.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Swap {
    /// Position in the selection list.
    pub position: usize,
    pub from: usize,
    pub to: usize,
    /// Cumulative score of `from` against the other picks.
    pub before: f64,
    /// Cumulative score of `to` against the other picks.
    pub after: f64,
}

fn cumulative_against(s: &ScoreMatrix, selection: &[usize], skip: usize, c: usize) -> f64 {
    selection
        .iter()
        .enumerate()
        .filter(|&(p, _)| p != skip)
        .map(|(_, &y)| s.pair_score(y, c))
        .sum()
}

/// One in-order pass of neighbour refinement under `s_r`.
pub fn refine(s_r: &ScoreMatrix, selection: &[usize], k_window: usize) -> Vec<usize> {
    refine_traced(s_r, selection, k_window).0
}

pub fn refine_traced(
    s_r: &ScoreMatrix,
    selection: &[usize],
    k_window: usize,
) -> (Vec<usize>, Vec<Swap>) {
    let n = s_r.n();
    let mut current = selection.to_vec();
    let mut swaps = Vec::new();
    if k_window == 0 {
        return (current, swaps);
    }
    for pos in 0..current.len() {
        let y = current[pos];
        let base = cumulative_against(s_r, &current, pos, y);
        let (mut best, mut best_score) = (y, base);
        let lo = y.saturating_sub(k_window);
        let hi = (y + k_window).min(n - 1);
        for c in lo..=hi {
            if c == y || current.contains(&c) {
                continue;
            }
            let score = cumulative_against(s_r, &current, pos, c);
            if score > best_score {
                best = c;
                best_score = score;
            }
        }
        if best != y {
            swaps.push(Swap {
                position: pos,
                from: y,
                to: best,
                before: base,
                after: best_score,
            });
            current[pos] = best;
        }
    }
    (current, swaps)
}

/// Greedy search end to end from embeddings, on the asymmetric matrix.
pub fn greedy_select(
    e: &EmbeddingMatrix,
    q: &QueryVector,
    alpha: f64,
    k: usize,
    cfg: &GreedyConfig,
) -> Result<SelectionResult> {
    let s = build_score_matrix(e, q, alpha, Variant::AsymmetricUpper)?;
    greedy_select_on(&s, k, cfg)
}

/// Greedy search on a prebuilt score matrix. The reported objective is on `s`.
pub fn greedy_select_on(s: &ScoreMatrix, k: usize, cfg: &GreedyConfig) -> Result<SelectionResult> {
    greedy_select_traced(s, k, cfg).map(|(r, _)| r)
}

/// As [`greedy_select_on`], also returning the accepted refinement moves.
pub fn greedy_select_traced(
    s: &ScoreMatrix,
    k: usize,
    cfg: &GreedyConfig,
) -> Result<(SelectionResult, Vec<Swap>)> {
    let start = Instant::now();
    cfg.validate()?;
    let n = s.n();
    check_k(k, n)?;
    let stats = |start: Instant| SolverStats {
        nodes_explored: 0,
        elapsed_ns: elapsed_ns(start),
        node_limit_hit: false,
    };
    if k == 1 {
        let r = SelectionResult::evaluate(s, vec![single_frame(s)], Solver::Greedy, stats(start))?;
        return Ok((r, Vec::new()));
    }

    let denoised: Cow<'_, ScoreMatrix> = if cfg.enable_lowrank {
        Cow::Owned(low_rank_approx(s, rank_for(n, cfg.rank_ratio))?)
    } else {
        Cow::Borrowed(s)
    };

    let relevance = s.relevance().filter(|_| cfg.enable_init);
    let run = |grid: &dyn CandidateGrid| -> Result<Vec<usize>> {
        let picks = match relevance {
            Some(r) => greedy_core(grid, r, k)?,
            None => greedy_core_from(grid, 0, k)?,
        };
        Ok(picks.into_iter().map(|a| grid.origin(a)).collect())
    };
    let picks = if cfg.enable_downsample && n > cfg.target_resolution {
        run(&downsample(&denoised, cfg.target_resolution)?)?
    } else {
        run(denoised.as_ref())?
    };

    let (picks, swaps) = if cfg.enable_refine {
        refine_traced(&denoised, &picks, cfg.refine_window_k)
    } else {
        (picks, Vec::new())
    };

    let r = SelectionResult::evaluate(s, picks, Solver::Greedy, stats(start))?;
    Ok((r, swaps))
}
