//! Query-aware keyframe selection.
//!
//! Frames are scored by relevance to a query and pairwise dissimilarity, and a
//! fixed-size subset is chosen to maximize a quadratic objective. Exact
//! solvers (enumeration, branch and bound), a fast greedy pipeline and
//! reference baselines share one score matrix. The selected keyframes can then
//! be threaded with captions of the frames between them.
//!
//! ```
//! use framesel_core::{greedy_select, EmbeddingMatrix, GreedyConfig, QueryVector};
//!
//! let frames: Vec<f64> = (0..40).flat_map(|t| {
//!     let a = t as f64 * 0.15;
//!     [a.cos(), a.sin()]
//! }).collect();
//! let e = EmbeddingMatrix::new(40, 2, frames).unwrap().normalize_rows().unwrap();
//! let q = QueryVector::new(vec![1.0, 0.0]).unwrap().normalize().unwrap();
//! let picks = greedy_select(&e, &q, 1.0, 4, &GreedyConfig::default()).unwrap();
//! assert_eq!(picks.indices.len(), 4);
//! ```

pub mod baselines;
pub mod embedding;
pub mod error;
pub mod exact;
pub mod greedy;
pub mod harness;
pub mod narrative;
pub mod scoring;

pub use baselines::{dpp_greedy_select, topk_select, uniform_select};
pub use embedding::{
    load_captions, load_embeddings, load_query, write_captions, write_embeddings, write_query,
    CaptionSet, EmbeddingMatrix, QueryVector,
};
pub use error::{Error, Result};
pub use exact::{
    branch_and_bound, brute_force, SelectionResult, Solver, SolverStats, DEFAULT_NODE_LIMIT,
    UNLIMITED_NODES,
};
pub use greedy::{greedy_select, greedy_select_on, GreedyConfig};
pub use harness::{
    compare_solvers, synth_instance, BatchSpec, ComparisonTable, MetricsReport, PlantedSegment,
    SolverConfig, SyntheticInstance, SyntheticSpec,
};
pub use narrative::{render_plan, thread, InterleavePlan, Layout, PlanItem, Scope};
pub use scoring::{
    build_score_matrix, downsample, low_rank_approx, objective, relevance_scores, RelevanceVector,
    ScoreMatrix, Variant, DEFAULT_ALPHA,
};

/// Largest frame count the dense pipeline accepts; the score matrix is
/// `n x n` doubles.
pub const MAX_DENSE_FRAMES: usize = 8192;
