use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // embedding store
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("matrix has a zero dimension")]
    DimZero,
    #[error("row {0} has zero norm")]
    ZeroRow(usize),
    #[error("duplicate index {0}")]
    DuplicateIndex(usize),
    #[error("malformed caption record on line {0}")]
    MalformedLine(usize),
    #[error("negative caption index on line {0}")]
    NegativeIndex(usize),
    #[error("caption for frame {index} is {len} bytes (limit {limit})")]
    CaptionTooLong {
        index: usize,
        len: usize,
        limit: usize,
    },
    #[error(transparent)]
    Io(#[from] io::Error),

    // scoring
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("input is not row-normalized")]
    NotNormalized,
    #[error("diversity is undefined for a frame against itself (index {0})")]
    SameIndex(usize),
    #[error("alpha must be nonnegative, got {0}")]
    NegativeAlpha(f64),
    #[error("index {index} out of range for n = {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("indices must be strictly increasing")]
    Unsorted,
    #[error("rank {rank} out of range 1..={n}")]
    RankOutOfRange { rank: usize, n: usize },
    #[error("target resolution {0} is below 2")]
    ResolutionTooSmall(usize),
    #[error("singular value decomposition did not converge")]
    SvdNoConvergence,
    #[error("score matrix violates its structure: {0}")]
    Structure(String),

    // solvers
    #[error("C({n}, {k}) exceeds the enumeration guard of {limit}")]
    SearchSpaceTooLarge { n: usize, k: usize, limit: u64 },
    #[error("k = {k} out of range 1..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid warm start: {0}")]
    InvalidWarmStart(String),
    #[error("DPP kernel is not positive semidefinite (pivot {0:e})")]
    KernelNotPsd(f64),
    #[error("{n} frames exceeds the dense limit of {limit}; stride the input first")]
    TooManyFrames { n: usize, limit: usize },

    // narratives
    #[error("no keyframes given")]
    EmptyKeyframes,
    #[error("no caption for frame {0}")]
    MissingCaption(usize),
    #[error("frame template must contain {{t}}: {0:?}")]
    BadTemplate(String),
    #[error("stride {delta} places {count} narratives, over the budget of {budget}")]
    DeltaExceedsBudget {
        delta: usize,
        count: usize,
        budget: usize,
    },

    // harness
    #[error("planted segments overlap")]
    OverlappingSegments,
    #[error("planted segment [{start}, {start}+{length}) out of range for n = {n}")]
    SegmentOutOfRange {
        start: usize,
        length: usize,
        n: usize,
    },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Solver guards (search-space and size caps) as opposed to bad data.
    pub fn is_guard(&self) -> bool {
        matches!(
            self,
            Error::SearchSpaceTooLarge { .. } | Error::TooManyFrames { .. }
        )
    }
}
