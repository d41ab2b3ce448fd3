//! Seeded synthetic instances with planted query-relevant segments, and the
//! metrics used to compare selectors on them.

use std::collections::HashSet;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{dpp_greedy_select, topk_select, uniform_select};
use crate::embedding::{EmbeddingMatrix, QueryVector};
use crate::error::{Error, Result};
use crate::exact::{
    branch_and_bound, brute_force, elapsed_ns, SelectionResult, Solver, SolverStats,
    DEFAULT_NODE_LIMIT, UNLIMITED_NODES,
};
use crate::greedy::{greedy_select_on, GreedyConfig};
use crate::scoring::{build_score_matrix, RelevanceVector, ScoreMatrix, Variant, DEFAULT_ALPHA};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedSegment {
    pub start: usize,
    pub length: usize,
    /// Weight of the query direction mixed into the segment's frames.
    pub relevance_boost: f64,
}

impl FromStr for PlantedSegment {
    type Err = Error;

    /// Parses `start:length:boost`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidSpec(format!("segment {s:?} is not start:len:boost"));
        let mut parts = s.split(':');
        let (Some(a), Some(b), Some(c), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        Ok(Self {
            start: a.trim().parse().map_err(|_| bad())?,
            length: b.trim().parse().map_err(|_| bad())?,
            relevance_boost: c.trim().parse().map_err(|_| bad())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_frames: usize,
    pub dim: usize,
    /// AR(1) mixing weight of the previous frame, in `[0, 1)`.
    pub smoothness_rho: f64,
    #[serde(default)]
    pub planted: Vec<PlantedSegment>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::InvalidSpec("n_frames must be positive".into()));
        }
        if self.dim < 2 {
            return Err(Error::InvalidSpec(format!("dim {} is below 2", self.dim)));
        }
        if !(0.0..1.0).contains(&self.smoothness_rho) {
            return Err(Error::InvalidSpec(format!(
                "rho {} outside [0, 1)",
                self.smoothness_rho
            )));
        }
        let mut segs = self.planted.clone();
        segs.sort_by_key(|s| s.start);
        for s in &segs {
            if s.length == 0 || s.start + s.length > self.n_frames {
                return Err(Error::SegmentOutOfRange {
                    start: s.start,
                    length: s.length,
                    n: self.n_frames,
                });
            }
            if !(s.relevance_boost > 0.0 && s.relevance_boost <= 1.0) {
                return Err(Error::InvalidSpec(format!(
                    "boost {} outside (0, 1]",
                    s.relevance_boost
                )));
            }
        }
        if segs.windows(2).any(|w| w[0].start + w[0].length > w[1].start) {
            return Err(Error::OverlappingSegments);
        }
        Ok(())
    }
}

/// Embeddings and query of one synthetic video, both row-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticInstance {
    pub embeddings: EmbeddingMatrix,
    pub query: QueryVector,
    /// Frames inside planted segments, ascending.
    pub planted: Vec<usize>,
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if let Some(u) = unit(v) {
            return u;
        }
    }
}

fn unit(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 1e-12) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

/// Background frames follow a renormalized AR(1) walk on the sphere,
/// `f_t ∝ rho f_{t-1} + (1 - rho) g_t` with `g_t` uniform on the sphere.
/// Planted frames are `normalize(b q + (1 - b) f_t)`; the walk itself
/// continues from the background frame.
pub fn synth_instance(spec: &SyntheticSpec) -> Result<SyntheticInstance> {
    spec.validate()?;
    let (n, dim, rho) = (spec.n_frames, spec.dim, spec.smoothness_rho);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let q = random_unit(&mut rng, dim);

    let mut boost = vec![None; n];
    for s in &spec.planted {
        for slot in &mut boost[s.start..s.start + s.length] {
            *slot = Some(s.relevance_boost);
        }
    }

    let mut data = Vec::with_capacity(n * dim);
    let mut prev: Option<Vec<f64>> = None;
    for b in boost.iter() {
        let g = random_unit(&mut rng, dim);
        let frame = match prev {
            None => g,
            Some(ref p) => {
                let mixed = p.iter().zip(&g).map(|(a, b)| rho * a + (1.0 - rho) * b).collect();
                unit(mixed).unwrap_or(g)
            }
        };
        match *b {
            Some(1.0) => data.extend_from_slice(&q),
            Some(b) => {
                let mixed: Vec<f64> = q.iter().zip(&frame).map(|(x, y)| b * x + (1.0 - b) * y).collect();
                // An exactly antipodal background frame cannot cancel q for b > 0.5;
                // below that, fall back to the query direction.
                data.extend(unit(mixed).unwrap_or_else(|| q.clone()));
            }
            None => data.extend_from_slice(&frame),
        }
        prev = Some(frame);
    }

    let embeddings = EmbeddingMatrix::new(n, dim, data)?.assume_normalized()?;
    let query = QueryVector::new(q)?.normalize()?;
    let planted = boost
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.map(|_| i))
        .collect();
    Ok(SyntheticInstance {
        embeddings,
        query,
        planted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub objective: f64,
    /// See [`optimality_ratio`]; present when an enumerated optimum was computed.
    pub optimality_ratio: Option<f64>,
    pub relevance_recall: f64,
    pub mean_relevance: f64,
    /// Smallest index distance between two picks; 0 with fewer than two.
    pub min_pairwise_gap: usize,
    /// Mean index distance over all pairs; 0 with fewer than two.
    pub mean_pairwise_gap: f64,
    pub elapsed_ns: u64,
}

/// `objective / optimum` for a positive optimum. The form `1 - (opt - obj) / |opt|`
/// extends it to negative optima so that the ratio stays at most 1; it is
/// undefined for a zero optimum.
pub fn optimality_ratio(objective: f64, optimum: f64) -> Option<f64> {
    if optimum > 0.0 {
        Some(objective / optimum)
    } else if optimum < 0.0 {
        Some(1.0 - (optimum - objective) / optimum.abs())
    } else {
        None
    }
}

pub fn evaluate(
    s: &ScoreMatrix,
    relevance: &RelevanceVector,
    selection: &SelectionResult,
    planted: &[usize],
    optimum: Option<f64>,
) -> MetricsReport {
    let picks = &selection.indices;
    let planted_set: HashSet<usize> = planted.iter().copied().collect();
    let relevance_recall = if planted_set.is_empty() {
        1.0
    } else {
        let hits = picks.iter().filter(|i| planted_set.contains(i)).count();
        hits as f64 / picks.len().min(planted_set.len()) as f64
    };
    let mean_relevance = if picks.is_empty() {
        0.0
    } else {
        picks.iter().map(|&i| relevance.scores()[i]).sum::<f64>() / picks.len() as f64
    };

    let mut sorted = picks.clone();
    sorted.sort_unstable();
    let min_pairwise_gap = sorted.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(0);
    let mut gap_sum = 0usize;
    let mut pairs = 0usize;
    for (a, &x) in sorted.iter().enumerate() {
        for &y in &sorted[a + 1..] {
            gap_sum += y - x;
            pairs += 1;
        }
    }
    let mean_pairwise_gap = if pairs == 0 {
        0.0
    } else {
        gap_sum as f64 / pairs as f64
    };

    let _ = s;
    MetricsReport {
        objective: selection.objective,
        optimality_ratio: optimum.and_then(|o| optimality_ratio(selection.objective, o)),
        relevance_recall,
        mean_relevance,
        min_pairwise_gap,
        mean_pairwise_gap,
        elapsed_ns: selection.stats.elapsed_ns,
    }
}

/// A selector and its settings, as named on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "lowercase")]
pub enum SolverConfig {
    Brute,
    Bnb {
        node_limit: u64,
        /// Seed the incumbent with the default greedy selection.
        greedy_warm_start: bool,
    },
    Greedy(GreedyConfig),
    Uniform,
    TopK,
    Dpp,
}

impl SolverConfig {
    pub fn label(&self) -> String {
        match self {
            SolverConfig::Brute => "brute".into(),
            SolverConfig::Bnb {
                node_limit,
                greedy_warm_start,
            } => {
                let limit = if *node_limit == UNLIMITED_NODES {
                    "inf".to_owned()
                } else {
                    node_limit.to_string()
                };
                let warm = if *greedy_warm_start { "+gs" } else { "" };
                format!("bnb:{limit}{warm}")
            }
            SolverConfig::Greedy(cfg) => {
                if *cfg == GreedyConfig::default() {
                    "greedy".into()
                } else if *cfg == GreedyConfig::vanilla() {
                    "greedy-vanilla".into()
                } else {
                    let mut label = String::from("greedy");
                    for (on, tag) in [
                        (cfg.enable_init, "init"),
                        (cfg.enable_lowrank, "lowrank"),
                        (cfg.enable_downsample, "downsample"),
                        (cfg.enable_refine, "refine"),
                    ] {
                        if on {
                            label.push('+');
                            label.push_str(tag);
                        }
                    }
                    label
                }
            }
            SolverConfig::Uniform => "uniform".into(),
            SolverConfig::TopK => "topk".into(),
            SolverConfig::Dpp => "dpp".into(),
        }
    }

    pub fn solver(&self) -> Solver {
        match self {
            SolverConfig::Brute => Solver::Brute,
            SolverConfig::Bnb { .. } => Solver::Bnb,
            SolverConfig::Greedy(_) => Solver::Greedy,
            SolverConfig::Uniform => Solver::Uniform,
            SolverConfig::TopK => Solver::TopK,
            SolverConfig::Dpp => Solver::Dpp,
        }
    }
}

impl FromStr for SolverConfig {
    type Err = Error;

    /// Accepts `brute`, `bnb`, `bnb:<limit|inf>`, optionally suffixed `+gs`,
    /// `greedy`, `greedy-vanilla`, `greedy+<stage>...` (stages `init`,
    /// `lowrank`, `downsample`, `refine`), `uniform`, `topk`, `dpp`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidConfig(format!("unknown solver {s:?}"));
        match s {
            "brute" => return Ok(SolverConfig::Brute),
            "uniform" => return Ok(SolverConfig::Uniform),
            "topk" => return Ok(SolverConfig::TopK),
            "dpp" => return Ok(SolverConfig::Dpp),
            "greedy" => return Ok(SolverConfig::Greedy(GreedyConfig::default())),
            "greedy-vanilla" => return Ok(SolverConfig::Greedy(GreedyConfig::vanilla())),
            _ => {}
        }
        if let Some(rest) = s.strip_prefix("greedy+") {
            let mut cfg = GreedyConfig::vanilla();
            for stage in rest.split('+') {
                match stage {
                    "init" => cfg.enable_init = true,
                    "lowrank" => cfg.enable_lowrank = true,
                    "downsample" => cfg.enable_downsample = true,
                    "refine" => cfg.enable_refine = true,
                    _ => return Err(bad()),
                }
            }
            return Ok(SolverConfig::Greedy(cfg));
        }
        if let Some(rest) = s.strip_prefix("bnb") {
            let (rest, greedy_warm_start) = match rest.strip_suffix("+gs") {
                Some(r) => (r, true),
                None => (rest, false),
            };
            let node_limit = match rest {
                "" => DEFAULT_NODE_LIMIT,
                ":inf" => UNLIMITED_NODES,
                _ => rest
                    .strip_prefix(':')
                    .and_then(|l| l.parse().ok())
                    .filter(|&l: &u64| l >= 1)
                    .ok_or_else(bad)?,
            };
            return Ok(SolverConfig::Bnb {
                node_limit,
                greedy_warm_start,
            });
        }
        Err(bad())
    }
}

fn timed(
    s: &ScoreMatrix,
    solver: Solver,
    pick: impl FnOnce() -> Result<Vec<usize>>,
) -> Result<SelectionResult> {
    let start = Instant::now();
    let picks = pick()?;
    let stats = SolverStats {
        nodes_explored: 0,
        elapsed_ns: elapsed_ns(start),
        node_limit_hit: false,
    };
    SelectionResult::evaluate(s, picks, solver, stats)
}

/// Runs one selector. `s` must be the score matrix of `instance`; every
/// objective is reported on it.
pub fn run_solver(
    config: &SolverConfig,
    instance: &SyntheticInstance,
    s: &ScoreMatrix,
    k: usize,
) -> Result<SelectionResult> {
    run_on(config, &instance.embeddings, &instance.query, s, k)
}

/// Runs one selector on explicit embeddings and their score matrix.
pub fn run_on(
    config: &SolverConfig,
    embeddings: &EmbeddingMatrix,
    query: &QueryVector,
    s: &ScoreMatrix,
    k: usize,
) -> Result<SelectionResult> {
    match config {
        SolverConfig::Brute => brute_force(s, k),
        SolverConfig::Bnb {
            node_limit,
            greedy_warm_start,
        } => {
            let warm = if *greedy_warm_start {
                Some(greedy_select_on(s, k, &GreedyConfig::default())?.indices)
            } else {
                None
            };
            branch_and_bound(s, k, *node_limit, warm.as_deref())
        }
        SolverConfig::Greedy(cfg) => greedy_select_on(s, k, cfg),
        SolverConfig::Uniform => timed(s, Solver::Uniform, || uniform_select(s.n(), k)),
        SolverConfig::TopK => timed(s, Solver::TopK, || {
            let rel = s
                .relevance()
                .ok_or_else(|| Error::InvalidConfig("top-K needs relevance scores".into()))?;
            topk_select(rel, k)
        }),
        SolverConfig::Dpp => timed(s, Solver::Dpp, || dpp_greedy_select(embeddings, query, k)),
    }
}

/// A batch of synthetic instances, either listed or stamped from a template
/// with a list of seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSpec {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub instances: Vec<SyntheticSpec>,
    #[serde(default)]
    pub template: Option<SyntheticSpec>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    /// Compute enumerated optima for optimality ratios.
    #[serde(default)]
    pub optimum: bool,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl BatchSpec {
    pub fn specs(&self) -> Vec<SyntheticSpec> {
        let mut out = self.instances.clone();
        if let Some(t) = &self.template {
            out.extend(self.seeds.iter().map(|&seed| SyntheticSpec { seed, ..t.clone() }));
        }
        out
    }

    pub fn generate(&self) -> Result<Vec<SyntheticInstance>> {
        self.specs().iter().map(synth_instance).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub solver: String,
    pub instances: usize,
    pub objective: f64,
    pub optimality_ratio: Option<f64>,
    pub relevance_recall: f64,
    pub mean_relevance: f64,
    pub min_pairwise_gap: f64,
    pub mean_pairwise_gap: f64,
    pub elapsed_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub k: usize,
    pub alpha: f64,
    pub rows: Vec<ComparisonRow>,
    /// `reports[instance][solver]`, in batch and declaration order.
    pub reports: Vec<Vec<MetricsReport>>,
}

impl ComparisonTable {
    pub fn row(&self, label: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.solver == label)
    }

    /// One row per solver. Wall-clock columns make the output vary between
    /// runs; leave them out for byte-stable tables.
    pub fn write_csv<W: Write>(&self, out: W, with_timing: bool) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![
            "solver",
            "instances",
            "objective",
            "optimality_ratio",
            "relevance_recall",
            "mean_relevance",
            "min_pairwise_gap",
            "mean_pairwise_gap",
        ];
        if with_timing {
            header.push("elapsed_ns");
        }
        w.write_record(&header)?;
        for r in &self.rows {
            let mut record = vec![
                r.solver.clone(),
                r.instances.to_string(),
                r.objective.to_string(),
                r.optimality_ratio.map_or_else(String::new, |v| v.to_string()),
                r.relevance_recall.to_string(),
                r.mean_relevance.to_string(),
                r.min_pairwise_gap.to_string(),
                r.mean_pairwise_gap.to_string(),
            ];
            if with_timing {
                record.push(r.elapsed_ns.to_string());
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self, with_timing: bool) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, with_timing)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

/// Runs every solver on every instance and aggregates per solver. With
/// `with_optimum`, each instance is also solved by enumeration and ratios are
/// reported against that optimum.
pub fn compare_solvers(
    batch: &[SyntheticInstance],
    solvers: &[SolverConfig],
    k: usize,
    alpha: f64,
    with_optimum: bool,
) -> Result<ComparisonTable> {
    let reports: Vec<Vec<MetricsReport>> = batch
        .par_iter()
        .map(|inst| -> Result<Vec<MetricsReport>> {
            let s = build_score_matrix(&inst.embeddings, &inst.query, alpha, Variant::AsymmetricUpper)?;
            let relevance = s.relevance().expect("built from embeddings").clone();
            let optimum = if with_optimum {
                Some(brute_force(&s, k)?.objective)
            } else {
                None
            };
            solvers
                .iter()
                .map(|cfg| {
                    let sel = run_solver(cfg, inst, &s, k)?;
                    Ok(evaluate(&s, &relevance, &sel, &inst.planted, optimum))
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let rows = solvers
        .iter()
        .enumerate()
        .map(|(j, cfg)| {
            let col = || reports.iter().map(move |r| &r[j]);
            ComparisonRow {
                solver: cfg.label(),
                instances: reports.len(),
                objective: mean(col().map(|m| m.objective)),
                optimality_ratio: with_optimum
                    .then(|| col().filter_map(|m| m.optimality_ratio).collect::<Vec<_>>())
                    .filter(|defined| !defined.is_empty())
                    .map(|defined| mean(defined.into_iter())),
                relevance_recall: mean(col().map(|m| m.relevance_recall)),
                mean_relevance: mean(col().map(|m| m.mean_relevance)),
                min_pairwise_gap: mean(col().map(|m| m.min_pairwise_gap as f64)),
                mean_pairwise_gap: mean(col().map(|m| m.mean_pairwise_gap)),
                elapsed_ns: mean(col().map(|m| m.elapsed_ns as f64)),
            }
        })
        .collect();

    Ok(ComparisonTable {
        k,
        alpha,
        rows,
        reports,
    })
}
