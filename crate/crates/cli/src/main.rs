use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use framesel_core::baselines::{dpp_greedy_select, topk_select, uniform_select};
use framesel_core::embedding::{
    load_captions, load_embeddings, load_query, write_embeddings, write_query,
};
use framesel_core::exact::{branch_and_bound, brute_force, SelectionResult, Solver, SolverStats};
use framesel_core::greedy::{greedy_select_on, GreedyConfig, DEFAULT_REFINE_WINDOW};
use framesel_core::harness::{compare_solvers, synth_instance, BatchSpec, PlantedSegment, SolverConfig, SyntheticSpec};
use framesel_core::narrative::{render_plan, thread, InterleavePlan, Layout, Scope, ThreadBudget};
use framesel_core::scoring::{
    build_score_matrix, ScoreMatrix, Variant, DEFAULT_RANK_RATIO, DEFAULT_TARGET_RESOLUTION,
};
use framesel_core::{
    EmbeddingMatrix, Error as CoreError, QueryVector, DEFAULT_ALPHA, DEFAULT_NODE_LIMIT,
    MAX_DENSE_FRAMES, UNLIMITED_NODES,
};

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_GUARD: u8 = 4;

/// Query-aware keyframe selection and caption threading.
#[derive(Parser)]
#[command(name = "framesel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select K keyframes and print the selection as JSON.
    Select(SelectArgs),
    /// Interleave a selection with captions and print the plan as JSON.
    Thread(ThreadArgs),
    /// Generate a synthetic instance with planted relevant segments.
    Synth(SynthArgs),
    /// Run several solvers over a batch of synthetic instances.
    Compare(CompareArgs),
    /// Print the score matrix as CSV.
    ScoreDump(ScoreDumpArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Brute,
    Bnb,
    Greedy,
    Uniform,
    Topk,
    Dpp,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    AsymmetricUpper,
    Symmetric,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::AsymmetricUpper => Variant::AsymmetricUpper,
            VariantArg::Symmetric => Variant::Symmetric,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Between,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Interleaved,
    NarFirst,
    KfFirst,
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Csv,
    Json,
}

#[derive(Args)]
struct MatrixArgs {
    /// Frame embeddings (KFCE).
    #[arg(long)]
    embeddings: PathBuf,
    /// Query embedding (KFCE, one row).
    #[arg(long)]
    query: PathBuf,
    /// Diversity weight.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "asymmetric-upper")]
    variant: VariantArg,
    /// Normalize rows on load instead of requiring unit-norm input.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    #[arg(long, value_enum, default_value = "greedy")]
    solver: SolverArg,
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Branch-and-bound node budget, or `inf`.
    #[arg(long, default_value_t = DEFAULT_NODE_LIMIT.to_string())]
    node_limit: String,
    /// Initial incumbent for branch and bound: a selection JSON or an index array.
    #[arg(long)]
    warm_start: Option<PathBuf>,
    /// Fraction of singular values kept by the low-rank step.
    #[arg(long, default_value_t = DEFAULT_RANK_RATIO)]
    rank_ratio: f64,
    /// Candidate grid size for downsampling.
    #[arg(long, default_value_t = DEFAULT_TARGET_RESOLUTION)]
    grid: usize,
    /// Refinement search window.
    #[arg(long, default_value_t = DEFAULT_REFINE_WINDOW)]
    refine_k: usize,
    #[arg(long)]
    no_lowrank: bool,
    #[arg(long)]
    no_downsample: bool,
    #[arg(long)]
    no_refine: bool,
    #[arg(long)]
    no_init: bool,
    /// Report wall-clock time; output then differs between runs.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ThreadArgs {
    /// Selection JSON, as printed by `select`.
    #[arg(long)]
    selection: PathBuf,
    /// Captions, one JSON record per line.
    #[arg(long)]
    captions: PathBuf,
    /// Maximum number of narratives.
    #[arg(long, default_value_t = ThreadBudget::default().total_narratives)]
    budget: usize,
    /// Fixed stride between narratives instead of solving it from the budget.
    #[arg(long)]
    delta: Option<usize>,
    #[arg(long, value_enum, default_value = "between")]
    scope: ScopeArg,
    #[arg(long, value_enum, default_value = "interleaved")]
    layout: LayoutArg,
    /// Video length for the full scope; defaults to one past the last caption or keyframe.
    #[arg(long)]
    n_frames: Option<usize>,
    /// Also render the plan with this frame template, e.g. `<frame:{t}>`.
    #[arg(long)]
    render: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    dim: usize,
    /// AR(1) smoothness in [0, 1).
    #[arg(long, default_value_t = 0.9)]
    rho: f64,
    /// Planted segments as `start:len:boost`, comma separated.
    #[arg(long, value_delimiter = ',')]
    plant: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for embeddings.kfce, query.kfce and planted.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Batch description (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Solvers, comma separated: brute, bnb[:N|:inf][+gs], greedy, greedy-vanilla,
    /// greedy+<init|lowrank|downsample|refine>..., uniform, topk, dpp.
    #[arg(long, value_delimiter = ',', default_value = "greedy,uniform,topk,dpp")]
    solvers: Vec<String>,
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Overrides the batch's alpha.
    #[arg(long)]
    alpha: Option<f64>,
    /// Compute enumerated optima and report optimality ratios.
    #[arg(long)]
    optimum: bool,
    #[arg(long, value_enum, default_value = "csv")]
    format: TableFormat,
    /// Include mean wall-clock time; output then differs between runs.
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreDumpArgs {
    #[command(flatten)]
    matrix: MatrixArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A problem with the command line that clap cannot see.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match err.downcast_ref::<CoreError>() {
        Some(e) if e.is_guard() => EXIT_GUARD,
        _ => EXIT_DATA,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("KFC_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| usage(format!("KFC_THREADS must be a thread count, got {raw:?}")))?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Select(args) => select(args),
        Command::Thread(args) => thread_cmd(args),
        Command::Synth(args) => synth(args),
        Command::Compare(args) => compare(args),
        Command::ScoreDump(args) => score_dump(args),
    }
}

fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(path) => {
            fs::write(path, body).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            let mut stdout = io::stdout().lock();
            match stdout.write_all(body.as_bytes()).and_then(|()| stdout.flush()) {
                // A closed pipe (`| head`) is the reader's choice, not a failure.
                Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
                _ => Ok(()),
            }
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(CoreError::from)
        .with_context(|| format!("parsing {}", path.display()))
}

fn load_inputs(m: &MatrixArgs) -> Result<(EmbeddingMatrix, QueryVector)> {
    let ctx = |p: &Path| format!("loading {}", p.display());
    let e = load_embeddings(&m.embeddings).with_context(|| ctx(&m.embeddings))?;
    if e.n_frames() > MAX_DENSE_FRAMES {
        return Err(CoreError::TooManyFrames {
            n: e.n_frames(),
            limit: MAX_DENSE_FRAMES,
        }
        .into());
    }
    let q = load_query(&m.query).with_context(|| ctx(&m.query))?;
    let (e, q) = if m.normalize {
        (e.normalize_rows()?, q.normalize()?)
    } else {
        let e = e
            .assume_normalized()
            .with_context(|| format!("{} (pass --normalize)", m.embeddings.display()))?;
        let q = q
            .assume_normalized()
            .with_context(|| format!("{} (pass --normalize)", m.query.display()))?;
        (e, q)
    };
    Ok((e, q))
}

fn build_matrix(m: &MatrixArgs) -> Result<(EmbeddingMatrix, QueryVector, ScoreMatrix)> {
    if !(m.alpha >= 0.0) || !m.alpha.is_finite() {
        return Err(usage(format!("--alpha must be a nonnegative number, got {}", m.alpha)));
    }
    let (e, q) = load_inputs(m)?;
    let s = build_score_matrix(&e, &q, m.alpha, m.variant.into())?;
    Ok((e, q, s))
}

fn parse_node_limit(raw: &str) -> Result<u64> {
    match raw.trim() {
        "inf" | "unlimited" => Ok(UNLIMITED_NODES),
        other => other
            .parse::<u64>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| usage(format!("--node-limit must be a positive count or `inf`, got {raw:?}"))),
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WarmStart {
    Selection { indices: Vec<usize> },
    Indices(Vec<usize>),
}

impl WarmStart {
    fn into_indices(self) -> Vec<usize> {
        match self {
            WarmStart::Selection { indices } | WarmStart::Indices(indices) => indices,
        }
    }
}

fn timed(solver: Solver, s: &ScoreMatrix, pick: impl FnOnce() -> framesel_core::Result<Vec<usize>>) -> Result<SelectionResult> {
    let start = std::time::Instant::now();
    let indices = pick()?;
    let stats = SolverStats {
        elapsed_ns: u64::try_from(start.elapsed().as_nanos()).unwrap_or(u64::MAX),
        ..SolverStats::default()
    };
    Ok(SelectionResult::evaluate(s, indices, solver, stats)?)
}

fn select(args: SelectArgs) -> Result<()> {
    let node_limit = parse_node_limit(&args.node_limit)?;
    if args.warm_start.is_some() && !matches!(args.solver, SolverArg::Bnb) {
        return Err(usage("--warm-start only applies to --solver bnb"));
    }
    let warm = match &args.warm_start {
        Some(path) => Some(read_json::<WarmStart>(path)?.into_indices()),
        None => None,
    };
    let (e, q, s) = build_matrix(&args.matrix)?;
    let k = args.k;

    let mut result = match args.solver {
        SolverArg::Brute => brute_force(&s, k)?,
        SolverArg::Bnb => branch_and_bound(&s, k, node_limit, warm.as_deref())?,
        SolverArg::Greedy => {
            let cfg = GreedyConfig {
                rank_ratio: args.rank_ratio,
                target_resolution: args.grid,
                refine_window_k: args.refine_k,
                enable_lowrank: !args.no_lowrank,
                enable_downsample: !args.no_downsample,
                enable_refine: !args.no_refine,
                enable_init: !args.no_init,
            };
            greedy_select_on(&s, k, &cfg)?
        }
        SolverArg::Uniform => timed(Solver::Uniform, &s, || uniform_select(s.n(), k))?,
        SolverArg::Topk => timed(Solver::TopK, &s, || {
            topk_select(s.relevance().expect("built from embeddings"), k)
        })?,
        SolverArg::Dpp => timed(Solver::Dpp, &s, || dpp_greedy_select(&e, &q, k))?,
    };
    if result.stats.node_limit_hit {
        eprintln!(
            "warning: node limit reached after {} nodes; the selection may not be optimal",
            result.stats.nodes_explored
        );
    }
    if !args.timing {
        result.stats.elapsed_ns = 0;
    }
    emit(args.out.as_deref(), &to_json(&result)?)
}

#[derive(Serialize)]
struct RenderedPlan<'a> {
    #[serde(flatten)]
    plan: &'a InterleavePlan,
    rendered: String,
}

fn thread_cmd(args: ThreadArgs) -> Result<()> {
    let selection: WarmStart = read_json(&args.selection)?;
    let keyframes = selection.into_indices();
    let captions = load_captions(&args.captions)
        .with_context(|| format!("loading {}", args.captions.display()))?;
    let scope = match args.scope {
        ScopeArg::Between => Scope::BetweenKeyframes,
        ScopeArg::Full => Scope::FullVideo,
    };
    let layout = match args.layout {
        LayoutArg::Interleaved => Layout::Interleaved,
        LayoutArg::NarFirst => Layout::NarrativesFirst,
        LayoutArg::KfFirst => Layout::KeyframesFirst,
    };
    if args.delta == Some(0) {
        return Err(usage("--delta must be at least 1"));
    }
    let n_frames = args.n_frames.unwrap_or_else(|| {
        let last_caption = captions.iter().map(|(i, _)| i).max();
        let last_key = keyframes.iter().copied().max();
        last_caption.max(last_key).map_or(0, |m| m + 1)
    });
    let budget = ThreadBudget {
        total_narratives: args.budget,
        delta: args.delta,
    };
    let plan = thread(&keyframes, &captions, &budget, scope, layout, n_frames)?;
    let body = match &args.render {
        Some(template) => to_json(&RenderedPlan {
            plan: &plan,
            rendered: render_plan(&plan, template)?,
        })?,
        None => to_json(&plan)?,
    };
    emit(args.out.as_deref(), &body)
}

#[derive(Serialize)]
struct SynthManifest {
    embeddings: PathBuf,
    query: PathBuf,
    planted: PathBuf,
    n_frames: usize,
    dim: usize,
    planted_frames: Vec<usize>,
}

fn synth(args: SynthArgs) -> Result<()> {
    let planted = args
        .plant
        .iter()
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.parse::<PlantedSegment>().map_err(|e| usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let spec = SyntheticSpec {
        n_frames: args.n,
        dim: args.dim,
        smoothness_rho: args.rho,
        planted,
        seed: args.seed,
    };
    let inst = synth_instance(&spec)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let manifest = SynthManifest {
        embeddings: args.out.join("embeddings.kfce"),
        query: args.out.join("query.kfce"),
        planted: args.out.join("planted.json"),
        n_frames: spec.n_frames,
        dim: spec.dim,
        planted_frames: inst.planted.clone(),
    };
    write_embeddings(&inst.embeddings, &manifest.embeddings)?;
    write_query(&inst.query, &manifest.query)?;
    fs::write(&manifest.planted, to_json(&inst.planted)?)?;
    emit(None, &to_json(&manifest)?)
}

fn compare(args: CompareArgs) -> Result<()> {
    let batch: BatchSpec = read_json(&args.spec)?;
    let solvers = args
        .solvers
        .iter()
        .map(|s| s.parse::<SolverConfig>().map_err(|e| usage(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    if solvers.is_empty() {
        return Err(usage("--solvers is empty"));
    }
    let alpha = args.alpha.unwrap_or(batch.alpha);
    if !(alpha >= 0.0) {
        return Err(usage(format!("alpha must be nonnegative, got {alpha}")));
    }
    let specs = batch.specs();
    if specs.is_empty() {
        return Err(anyhow::anyhow!("{} lists no instances", args.spec.display()));
    }
    if let Some(big) = specs.iter().find(|s| s.n_frames > MAX_DENSE_FRAMES) {
        return Err(CoreError::TooManyFrames {
            n: big.n_frames,
            limit: MAX_DENSE_FRAMES,
        }
        .into());
    }
    let instances = batch.generate()?;
    let table = compare_solvers(&instances, &solvers, args.k, alpha, args.optimum || batch.optimum)?;
    let body = match args.format {
        TableFormat::Csv => table.to_csv_string(args.timing)?,
        TableFormat::Json => {
            let mut table = table;
            if !args.timing {
                for row in &mut table.rows {
                    row.elapsed_ns = 0.0;
                }
                for report in table.reports.iter_mut().flatten() {
                    report.elapsed_ns = 0;
                }
            }
            to_json(&table)?
        }
    };
    emit(args.out.as_deref(), &body)
}

fn score_dump(args: ScoreDumpArgs) -> Result<()> {
    let (_, _, s) = build_matrix(&args.matrix)?;
    let n = s.n();
    let mut body = format!(
        "# variant={},alpha={},n={}\n",
        s.variant().as_str(),
        s.alpha(),
        n
    );
    for i in 0..n {
        let row: Vec<String> = s.row(i).iter().map(f64::to_string).collect();
        body.push_str(&row.join(","));
        body.push('\n');
    }
    emit(args.out.as_deref(), &body)
}
