#![allow(dead_code)]

use framesel_core::harness::{synth_instance, PlantedSegment, SyntheticInstance, SyntheticSpec};
use framesel_core::scoring::{build_score_matrix, ScoreMatrix, Variant};
use framesel_core::{EmbeddingMatrix, QueryVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random unit-norm embeddings and query with `i.i.d.` gaussian entries.
pub fn gaussian_inputs(seed: u64, n: usize, dim: usize) -> (EmbeddingMatrix, QueryVector) {
    let mut r = rng(seed);
    let mut draw = |len: usize| -> Vec<f64> {
        (0..len).map(|_| r.sample::<f64, _>(rand_distr::StandardNormal)).collect()
    };
    let e = EmbeddingMatrix::new(n, dim, draw(n * dim))
        .unwrap()
        .normalize_rows()
        .unwrap();
    let q = QueryVector::new(draw(dim)).unwrap().normalize().unwrap();
    (e, q)
}

/// A planted instance with one or two random segments, used for the solver
/// quality checks.
pub fn planted_instance(seed: u64, n: usize, dim: usize) -> SyntheticInstance {
    let mut r = rng(seed ^ 0x9e37_79b9_7f4a_7c15);
    let segments = r.random_range(1..=2);
    let mut planted: Vec<PlantedSegment> = Vec::new();
    let half = n / segments;
    for s in 0..segments {
        let length = r.random_range(2..=(half / 4).max(2));
        let start = s * half + r.random_range(0..half - length);
        planted.push(PlantedSegment {
            start,
            length,
            relevance_boost: r.random_range(0.3..0.9),
        });
    }
    let spec = SyntheticSpec {
        n_frames: n,
        dim,
        smoothness_rho: r.random_range(0.5..0.95),
        planted,
        seed,
    };
    synth_instance(&spec).unwrap()
}

pub fn asymmetric(inst: &SyntheticInstance, alpha: f64) -> ScoreMatrix {
    build_score_matrix(&inst.embeddings, &inst.query, alpha, Variant::AsymmetricUpper).unwrap()
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Objective as a plain double loop over ordered pairs of the set.
pub fn naive_objective(s: &ScoreMatrix, set: &[usize]) -> f64 {
    let mut total = 0.0;
    for &i in set {
        for &j in set {
            total += s.get(i, j);
        }
    }
    total
}

/// Enumerated optimum with the lexicographically smallest maximizer.
pub fn oracle_optimum(s: &ScoreMatrix, k: usize) -> (Vec<usize>, f64) {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for set in subsets(s.n(), k) {
        let v = naive_objective(s, &set);
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((set, v));
        }
    }
    best.unwrap()
}

pub fn min_gap(set: &[usize]) -> usize {
    let mut sorted = set.to_vec();
    sorted.sort_unstable();
    sorted.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(0)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
