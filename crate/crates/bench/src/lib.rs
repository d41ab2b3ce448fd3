//! Fixtures shared by the solver benchmarks.

use framesel_core::harness::{synth_instance, PlantedSegment, SyntheticSpec};
use framesel_core::scoring::{build_score_matrix, ScoreMatrix, Variant};

/// Asymmetric score matrix over a smooth synthetic video of `n` frames
/// with one planted relevant segment near the middle.
pub fn fixture(n: usize, seed: u64) -> ScoreMatrix {
    let spec = SyntheticSpec {
        n_frames: n,
        dim: 64,
        smoothness_rho: 0.9,
        planted: vec![PlantedSegment { start: n / 2, length: (n / 32).max(1), relevance_boost: 0.6 }],
        seed,
    };
    let inst = synth_instance(&spec).expect("valid fixture spec");
    build_score_matrix(&inst.embeddings, &inst.query, 1.0, Variant::AsymmetricUpper)
        .expect("fixture matrix")
}
