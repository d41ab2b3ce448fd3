//! Exact maximization of `x^T S x` subject to `|x| = k`.
//!
//! Both solvers share one tie-break: among sets with equal objective the
//! lexicographically smallest sorted index list wins. Branch-and-bound visits
//! leaves in lexicographic order (ascending index, include-branch first), so
//! with an unlimited node budget it returns exactly what enumeration returns.

use std::cmp::Ordering;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{check_index_set, ScoreMatrix};

/// Largest `C(n, k)` [`brute_force`] will enumerate.
pub const BRUTE_FORCE_LIMIT: u64 = 100_000_000;
pub const DEFAULT_NODE_LIMIT: u64 = 40_000;
pub const UNLIMITED_NODES: u64 = u64::MAX;

/// Above this size the bound uses per-row maxima instead of sorted partner
/// lists, trading tightness for `O(n)` memory.
const SORTED_PARTNER_MAX_N: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Brute,
    Bnb,
    Greedy,
    Uniform,
    TopK,
    Dpp,
}

impl Solver {
    pub fn as_str(self) -> &'static str {
        match self {
            Solver::Brute => "brute",
            Solver::Bnb => "bnb",
            Solver::Greedy => "greedy",
            Solver::Uniform => "uniform",
            Solver::TopK => "topk",
            Solver::Dpp => "dpp",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverStats {
    pub nodes_explored: u64,
    pub elapsed_ns: u64,
    pub node_limit_hit: bool,
}

/// A keyframe set with its objective on the original score matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    pub objective: f64,
    pub solver: Solver,
    #[serde(flatten)]
    pub stats: SolverStats,
}

impl SelectionResult {
    /// Sorts `indices` and scores them on `s`.
    pub fn evaluate(
        s: &ScoreMatrix,
        mut indices: Vec<usize>,
        solver: Solver,
        stats: SolverStats,
    ) -> Result<Self> {
        indices.sort_unstable();
        let objective = s.objective(&indices)?;
        Ok(Self {
            indices,
            objective,
            solver,
            stats,
        })
    }

    pub fn k(&self) -> usize {
        self.indices.len()
    }
}

pub(crate) fn elapsed_ns(start: Instant) -> u64 {
    u64::try_from(start.elapsed().as_nanos()).unwrap_or(u64::MAX)
}

pub(crate) fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::KOutOfRange { k, n });
    }
    Ok(())
}

/// The single-frame answer shared by every solver: `x^T S x` is zero for all
/// singletons, so the most query-relevant frame is taken (lowest index on
/// ties, frame 0 when no relevance is attached).
pub(crate) fn single_frame(s: &ScoreMatrix) -> usize {
    s.relevance().and_then(|r| r.argmax()).unwrap_or(0)
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Is `(a_obj, a)` a better incumbent than `(b_obj, b)`?
fn beats(a_obj: f64, a: &[usize], b_obj: f64, b: &[usize]) -> bool {
    match a_obj.partial_cmp(&b_obj) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Equal) => a < b,
        _ => false,
    }
}

/// Advances `combo` to the next k-combination of `0..n` in lexicographic order.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    let Some(pos) = (0..k).rev().find(|&i| combo[i] < n - k + i) else {
        return false;
    };
    combo[pos] += 1;
    for i in pos + 1..k {
        combo[i] = combo[i - 1] + 1;
    }
    true
}

/// Exhaustive enumeration over all `C(n, k)` subsets.
pub fn brute_force(s: &ScoreMatrix, k: usize) -> Result<SelectionResult> {
    let start = Instant::now();
    let n = s.n();
    check_k(k, n)?;
    if k == 1 {
        let stats = SolverStats {
            nodes_explored: n as u64,
            elapsed_ns: elapsed_ns(start),
            node_limit_hit: false,
        };
        return SelectionResult::evaluate(s, vec![single_frame(s)], Solver::Brute, stats);
    }
    let total = binomial(n, k);
    if total > BRUTE_FORCE_LIMIT as u128 {
        return Err(Error::SearchSpaceTooLarge {
            n,
            k,
            limit: BRUTE_FORCE_LIMIT,
        });
    }

    // Split on the first element; each worker scans its block in lex order.
    let blocks: Vec<(f64, Vec<usize>)> = (0..=n - k)
        .into_par_iter()
        .map(|first| {
            let mut tail: Vec<usize> = (first + 1..first + k).collect();
            let mut combo = Vec::with_capacity(k);
            let mut best: Option<(f64, Vec<usize>)> = None;
            loop {
                combo.clear();
                combo.push(first);
                combo.extend_from_slice(&tail);
                let value = s.objective_unchecked(&combo);
                if best.as_ref().is_none_or(|(b, _)| value > *b) {
                    best = Some((value, combo.clone()));
                }
                if !next_combination(&mut tail, n) {
                    break;
                }
            }
            best.expect("every block holds at least one subset")
        })
        .collect();

    let (objective, indices) = blocks
        .into_iter()
        .reduce(|acc, cand| {
            if beats(cand.0, &cand.1, acc.0, &acc.1) {
                cand
            } else {
                acc
            }
        })
        .expect("at least one block");

    Ok(SelectionResult {
        indices,
        objective,
        solver: Solver::Brute,
        stats: SolverStats {
            nodes_explored: u64::try_from(total).unwrap_or(u64::MAX),
            elapsed_ns: elapsed_ns(start),
            node_limit_hit: false,
        },
    })
}

fn sum_top(values: &mut [f64], count: usize) -> f64 {
    if count == 0 {
        return 0.0;
    }
    if count < values.len() {
        values.select_nth_unstable_by(count - 1, |a, b| b.total_cmp(a));
    }
    values[..count.min(values.len())].iter().sum()
}

/// Admissible upper bound on `x^T S x` over every completion of `fixed_in`
/// with `remaining_slots` more indices drawn from `next_candidate..n`.
///
/// Each candidate `c` is credited with its exact linear gain against the
/// fixed set plus half of its `remaining_slots - 1` best pair scores against
/// other candidates; the bound adds the best `remaining_slots` credits to the
/// fixed set's value. Returns `-inf` when too few candidates remain.
pub fn upper_bound(
    s: &ScoreMatrix,
    fixed_in: &[usize],
    next_candidate: usize,
    remaining_slots: usize,
) -> f64 {
    let n = s.n();
    let fixed_value = s.objective_unchecked(fixed_in);
    if remaining_slots == 0 {
        return fixed_value;
    }
    let candidates: Vec<usize> = (next_candidate.min(n)..n)
        .filter(|c| !fixed_in.contains(c))
        .collect();
    if candidates.len() < remaining_slots {
        return f64::NEG_INFINITY;
    }
    let mut credits: Vec<f64> = candidates
        .iter()
        .map(|&c| {
            let linear: f64 =
                fixed_in.iter().map(|&f| s.pair_score(f, c)).sum::<f64>() + s.get(c, c);
            let mut partners: Vec<f64> = candidates
                .iter()
                .filter(|&&o| o != c)
                .map(|&o| s.pair_score(c, o))
                .collect();
            linear + 0.5 * sum_top(&mut partners, remaining_slots - 1)
        })
        .collect();
    fixed_value + sum_top(&mut credits, remaining_slots)
}

/// One visited search node, reported to a [`SearchObserver`].
#[derive(Debug, Clone, Copy)]
pub struct NodeVisit<'a> {
    /// Indices included so far, ascending. Every index below `next` that is
    /// not here has been excluded.
    pub fixed: &'a [usize],
    pub next: usize,
    pub remaining: usize,
    /// `None` at leaves.
    pub bound: Option<f64>,
    pub incumbent: f64,
    pub pruned: bool,
}

impl NodeVisit<'_> {
    /// Whether `set` (sorted) is a completion of this node.
    pub fn contains(&self, set: &[usize]) -> bool {
        let prefix: Vec<usize> = set.iter().copied().filter(|&i| i < self.next).collect();
        prefix == self.fixed
    }
}

pub trait SearchObserver {
    fn visit(&mut self, node: &NodeVisit<'_>);
}

impl SearchObserver for () {
    fn visit(&mut self, _: &NodeVisit<'_>) {}
}

impl<F: FnMut(&NodeVisit<'_>)> SearchObserver for F {
    fn visit(&mut self, node: &NodeVisit<'_>) {
        self(node)
    }
}

enum Partners {
    /// Per row, other indices ordered by descending pair score.
    Sorted(Vec<Vec<u32>>),
    /// Per row, the largest pair score against any other index.
    RowMax(Vec<f64>),
}

impl Partners {
    fn build(s: &ScoreMatrix) -> Self {
        let n = s.n();
        if n <= SORTED_PARTNER_MAX_N {
            let rows = (0..n)
                .into_par_iter()
                .map(|c| {
                    let mut order: Vec<u32> = (0..n as u32).filter(|&o| o as usize != c).collect();
                    order.sort_by(|&a, &b| {
                        s.pair_score(c, b as usize)
                            .total_cmp(&s.pair_score(c, a as usize))
                            .then(a.cmp(&b))
                    });
                    order
                })
                .collect();
            Partners::Sorted(rows)
        } else {
            Partners::RowMax(
                (0..n)
                    .into_par_iter()
                    .map(|c| {
                        (0..n)
                            .filter(|&o| o != c)
                            .map(|o| s.pair_score(c, o))
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .collect(),
            )
        }
    }

    /// Upper bound on the sum of `count` pair scores of `c` against indices
    /// in `next..n`, excluding `c` itself.
    fn best_sum(&self, s: &ScoreMatrix, c: usize, next: usize, count: usize) -> f64 {
        if count == 0 {
            return 0.0;
        }
        match self {
            Partners::Sorted(rows) => rows[c]
                .iter()
                .map(|&o| o as usize)
                .filter(|&o| o >= next)
                .take(count)
                .map(|o| s.pair_score(c, o))
                .sum(),
            Partners::RowMax(max) => count as f64 * max[c],
        }
    }
}

struct Search<'a, O> {
    s: &'a ScoreMatrix,
    k: usize,
    node_limit: u64,
    partners: Partners,
    observer: &'a mut O,
    nodes: u64,
    limit_hit: bool,
    fixed: Vec<usize>,
    /// `linear[d][c]`: gain of adding `c` to the first `d` fixed indices,
    /// including the diagonal entry.
    linear: Vec<Vec<f64>>,
    fixed_value: Vec<f64>,
    credits: Vec<f64>,
    best: Option<(f64, Vec<usize>)>,
}

impl<O: SearchObserver> Search<'_, O> {
    fn incumbent(&self) -> f64 {
        self.best.as_ref().map_or(f64::NEG_INFINITY, |b| b.0)
    }

    fn bound(&mut self, next: usize, remaining: usize) -> f64 {
        let n = self.s.n();
        let depth = self.fixed.len();
        self.credits.clear();
        for c in next..n {
            let credit = self.linear[depth][c]
                + 0.5 * self.partners.best_sum(self.s, c, next, remaining - 1);
            self.credits.push(credit);
        }
        self.fixed_value[depth] + sum_top(&mut self.credits, remaining)
    }

    /// Whether a node with this bound can be discarded. The slack absorbs
    /// rounding differences between the incremental bound and the leaf
    /// objective so ties are never cut.
    fn prunable(&self, bound: f64) -> bool {
        let inc = self.incumbent();
        inc.is_finite() && bound + 1e-9 * inc.abs().max(1.0) < inc
    }

    /// Explores the subtree rooted at `(fixed, next)` and all of its
    /// exclude-siblings `(fixed, next + 1)`, ... iteratively. Returns false
    /// once the node budget is exhausted.
    fn explore(&mut self, mut next: usize) -> bool {
        let n = self.s.n();
        let remaining = self.k - self.fixed.len();
        loop {
            if self.nodes >= self.node_limit {
                self.limit_hit = true;
                return false;
            }
            self.nodes += 1;

            if remaining == 0 {
                let value = self.s.objective_unchecked(&self.fixed);
                let improves = match &self.best {
                    None => true,
                    Some((b, set)) => beats(value, &self.fixed, *b, set),
                };
                if improves {
                    self.best = Some((value, self.fixed.clone()));
                }
                self.observer.visit(&NodeVisit {
                    fixed: &self.fixed,
                    next,
                    remaining,
                    bound: None,
                    incumbent: self.incumbent(),
                    pruned: false,
                });
                return true;
            }

            let bound = self.bound(next, remaining);
            let pruned = self.prunable(bound);
            self.observer.visit(&NodeVisit {
                fixed: &self.fixed,
                next,
                remaining,
                bound: Some(bound),
                incumbent: self.incumbent(),
                pruned,
            });
            if pruned {
                return true;
            }

            // Include `next`.
            let depth = self.fixed.len();
            let gain = self.linear[depth][next];
            self.fixed_value[depth + 1] = self.fixed_value[depth] + gain;
            let (head, tail) = self.linear.split_at_mut(depth + 1);
            let (parent, child) = (&head[depth], &mut tail[0]);
            for (j, slot) in child.iter_mut().enumerate() {
                *slot = parent[j] + self.s.pair_score(next, j);
            }
            self.fixed.push(next);
            let keep_going = self.explore(next + 1);
            self.fixed.pop();
            if !keep_going {
                return false;
            }

            // Exclude `next`: continue with the sibling if it stays feasible.
            next += 1;
            if n - next < remaining {
                return true;
            }
        }
    }
}

/// Depth-first branch-and-bound over include/exclude decisions in ascending
/// index order. Stops after `node_limit` nodes and returns the best incumbent.
pub fn branch_and_bound(
    s: &ScoreMatrix,
    k: usize,
    node_limit: u64,
    warm_start: Option<&[usize]>,
) -> Result<SelectionResult> {
    branch_and_bound_observed(s, k, node_limit, warm_start, &mut ())
}

pub fn branch_and_bound_observed<O: SearchObserver>(
    s: &ScoreMatrix,
    k: usize,
    node_limit: u64,
    warm_start: Option<&[usize]>,
    observer: &mut O,
) -> Result<SelectionResult> {
    let start = Instant::now();
    let n = s.n();
    check_k(k, n)?;
    let node_limit = node_limit.max(1);

    let best = match warm_start {
        Some(w) => {
            let mut w = w.to_vec();
            w.sort_unstable();
            if w.len() != k {
                return Err(Error::InvalidWarmStart(format!(
                    "{} indices for k = {k}",
                    w.len()
                )));
            }
            check_index_set(&w, n).map_err(|e| Error::InvalidWarmStart(e.to_string()))?;
            Some((s.objective_unchecked(&w), w))
        }
        None => None,
    };

    if k == 1 {
        let stats = SolverStats {
            nodes_explored: 0,
            elapsed_ns: elapsed_ns(start),
            node_limit_hit: false,
        };
        return SelectionResult::evaluate(s, vec![single_frame(s)], Solver::Bnb, stats);
    }

    let mut linear = vec![vec![0.0; n]; k + 1];
    for (c, slot) in linear[0].iter_mut().enumerate() {
        *slot = s.get(c, c);
    }
    let mut search = Search {
        s,
        k,
        node_limit,
        partners: Partners::build(s),
        observer,
        nodes: 0,
        limit_hit: false,
        fixed: Vec::with_capacity(k),
        linear,
        fixed_value: vec![0.0; k + 1],
        credits: Vec::with_capacity(n),
        best,
    };
    search.explore(0);

    let nodes_explored = search.nodes;
    let node_limit_hit = search.limit_hit;
    // Budget ran out before any leaf: fall back to the first leaf in
    // branching order.
    let indices = search.best.map_or_else(|| (0..k).collect(), |(_, set)| set);
    SelectionResult::evaluate(
        s,
        indices,
        Solver::Bnb,
        SolverStats {
            nodes_explored,
            elapsed_ns: elapsed_ns(start),
            node_limit_hit,
        },
    )
}
