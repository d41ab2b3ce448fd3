mod common;

use common::*;
use framesel_core::exact::{
    branch_and_bound, branch_and_bound_observed, brute_force, upper_bound, NodeVisit,
    UNLIMITED_NODES,
};
use framesel_core::greedy::{greedy_select_on, greedy_select_traced, GreedyConfig};
use framesel_core::scoring::{build_score_matrix, low_rank_approx, rank_for, ScoreMatrix, Variant};
use framesel_core::{Error, Solver};
use proptest::prelude::*;

fn instance() -> impl Strategy<Value = (ScoreMatrix, usize)> {
    (any::<u64>(), 4usize..13, 2usize..10, 0.0f64..2.5, any::<bool>(), 1usize..6).prop_map(
        |(seed, n, d, alpha, symmetric, k)| {
            let (e, q) = gaussian_inputs(seed, n, d);
            let variant = if symmetric { Variant::Symmetric } else { Variant::AsymmetricUpper };
            (build_score_matrix(&e, &q, alpha, variant).unwrap(), k.min(n))
        },
    )
}

/// Enumerated best completion of a node: every index below `next` is
/// decided, `fixed` holds the included ones.
fn best_completion(s: &ScoreMatrix, v: &NodeVisit<'_>) -> f64 {
    subsets(s.n(), v.fixed.len() + v.remaining)
        .into_iter()
        .filter(|set| v.contains(set))
        .map(|set| s.objective(&set).unwrap())
        .fold(f64::NEG_INFINITY, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn brute_force_matches_oracle((s, k) in instance()) {
        let r = brute_force(&s, k).unwrap();
        prop_assert_eq!(r.indices.len(), k);
        if k > 1 {
            let (_, best) = oracle_optimum(&s, k);
            prop_assert!((r.objective - best).abs() <= 1e-9 * best.abs().max(1.0));
        } else {
            prop_assert_eq!(r.indices[0], s.relevance().unwrap().argmax().unwrap());
        }
    }

    #[test]
    fn unlimited_bnb_equals_brute_force((s, k) in instance()) {
        let brute = brute_force(&s, k).unwrap();
        let bnb = branch_and_bound(&s, k, UNLIMITED_NODES, None).unwrap();
        prop_assert_eq!(&bnb.indices, &brute.indices);
        prop_assert_eq!(bnb.objective.to_bits(), brute.objective.to_bits());
        prop_assert!(!bnb.stats.node_limit_hit);
    }

    #[test]
    fn bound_is_admissible_at_every_node((s, k) in instance()) {
        prop_assume!(k > 1);
        let mut violations = Vec::new();
        let mut check = |v: &NodeVisit<'_>| {
            if let Some(bound) = v.bound {
                let best = best_completion(&s, v);
                if bound < best - 1e-9 * best.abs().max(1.0) {
                    violations.push((v.fixed.to_vec(), v.next, bound, best));
                }
                let direct = upper_bound(&s, v.fixed, v.next, v.remaining);
                if direct < best - 1e-9 * best.abs().max(1.0) {
                    violations.push((v.fixed.to_vec(), v.next, direct, best));
                }
            }
        };
        branch_and_bound_observed(&s, k, UNLIMITED_NODES, None, &mut check).unwrap();
        prop_assert!(violations.is_empty(), "{:?}", violations);
    }

    #[test]
    fn incumbent_grows_with_node_limit((s, k) in instance(), limits in prop::collection::vec(1u64..400, 2..6)) {
        let mut limits = limits;
        limits.sort_unstable();
        let objectives: Vec<f64> = limits
            .iter()
            .map(|&l| branch_and_bound(&s, k, l, None).unwrap().objective)
            .collect();
        prop_assert!(objectives.windows(2).all(|w| w[0] <= w[1]), "{:?} at {:?}", objectives, limits);
    }

    #[test]
    fn warm_start_is_never_lost((s, k) in instance(), limit in 1u64..200, pick in any::<prop::sample::Index>()) {
        let all = subsets(s.n(), k);
        let warm = &all[pick.index(all.len())];
        let r = branch_and_bound(&s, k, limit, Some(warm)).unwrap();
        prop_assert!(r.objective >= s.objective(warm).unwrap());
    }

    #[test]
    fn greedy_returns_valid_sets(seed in any::<u64>(), n in 2usize..300, k in 1usize..9, lowrank: bool, downsample: bool, refine: bool, init: bool) {
        let k = k.min(n);
        let (e, q) = gaussian_inputs(seed, n, 8);
        let s = build_score_matrix(&e, &q, 1.0, Variant::AsymmetricUpper).unwrap();
        let cfg = GreedyConfig {
            enable_lowrank: lowrank,
            enable_downsample: downsample,
            enable_refine: refine,
            enable_init: init,
            target_resolution: 32,
            ..GreedyConfig::default()
        };
        let (r, swaps) = greedy_select_traced(&s, k, &cfg).unwrap();
        prop_assert_eq!(r.indices.len(), k);
        prop_assert!(r.indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(r.indices.iter().all(|&i| i < n));
        prop_assert!(swaps.len() <= k);
        prop_assert!(swaps.iter().all(|w| w.after > w.before));
        prop_assert_eq!(r.objective, s.objective(&r.indices).unwrap());
        prop_assert_eq!(r.solver, Solver::Greedy);

        if downsample && !refine && k > 1 && n > 32 {
            let grid = framesel_core::scoring::downsample_grid(n, 32);
            prop_assert!(r.indices.iter().all(|i| grid.contains(i)));
        }
        let again = greedy_select_on(&s, k, &cfg).unwrap();
        prop_assert_eq!(again.indices, r.indices);
    }

    /// Every accepted swap, replayed on the denoised matrix, strictly raises
    /// the moved frame's cumulative score against the other picks.
    #[test]
    fn refinement_swaps_improve_their_criterion(seed in any::<u64>(), n in 8usize..80, k in 2usize..7) {
        let (e, q) = gaussian_inputs(seed, n, 6);
        let s = build_score_matrix(&e, &q, 1.0, Variant::AsymmetricUpper).unwrap();
        let cfg = GreedyConfig { enable_downsample: false, ..GreedyConfig::default() };
        let (r, swaps) = greedy_select_traced(&s, k, &cfg).unwrap();
        let s_r = low_rank_approx(&s, rank_for(n, cfg.rank_ratio)).unwrap();
        let mut unrefined = greedy_select_traced(&s, k, &GreedyConfig { enable_refine: false, ..cfg }).unwrap().0.indices;
        // Replay in selection order; indices may have been re-sorted, so
        // locate each swap by frame.
        for w in &swaps {
            let pos = unrefined.iter().position(|&y| y == w.from).unwrap();
            let score = |c: usize| -> f64 {
                unrefined.iter().enumerate().filter(|&(p, _)| p != pos).map(|(_, &y)| s_r.pair_score(y, c)).sum()
            };
            prop_assert!(score(w.to) > score(w.from));
            prop_assert!(w.from.abs_diff(w.to) <= cfg.refine_window_k);
            unrefined[pos] = w.to;
        }
        unrefined.sort_unstable();
        prop_assert_eq!(unrefined, r.indices);
    }
}

#[test]
fn brute_force_guard_on_large_search_space() {
    let (e, q) = gaussian_inputs(1, 2000, 4);
    let s = build_score_matrix(&e, &q, 1.0, Variant::AsymmetricUpper).unwrap();
    let err = brute_force(&s, 8).unwrap_err();
    assert!(matches!(err, Error::SearchSpaceTooLarge { n: 2000, k: 8, .. }));
    assert!(err.is_guard());
}

#[test]
fn singleton_selections_pick_the_most_relevant_frame() {
    let (e, q) = gaussian_inputs(3, 20, 5);
    let s = build_score_matrix(&e, &q, 1.0, Variant::AsymmetricUpper).unwrap();
    let best = s.relevance().unwrap().argmax().unwrap();
    assert_eq!(brute_force(&s, 1).unwrap().indices, vec![best]);
    assert_eq!(branch_and_bound(&s, 1, UNLIMITED_NODES, None).unwrap().indices, vec![best]);
    assert_eq!(greedy_select_on(&s, 1, &GreedyConfig::default()).unwrap().indices, vec![best]);
}
