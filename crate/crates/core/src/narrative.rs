//! Threading keyframes with captions of the frames between them.
//!
//! Between consecutive keyframes `y_i < y_{i+1}` the plan carries captions at
//! `y_i + Δ, y_i + 2Δ, ...` strictly below `y_{i+1}`. One global stride `Δ`
//! is chosen as the smallest value that keeps the caption count within
//! budget.

use serde::{Deserialize, Serialize};

use crate::embedding::CaptionSet;
use crate::error::{Error, Result};

pub const DEFAULT_NARRATIVE_BUDGET: usize = 210;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Scope {
    /// Only the gaps between the first and last keyframe.
    #[default]
    #[serde(rename = "between")]
    BetweenKeyframes,
    /// Also before the first and after the last keyframe.
    #[serde(rename = "full")]
    FullVideo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Layout {
    #[default]
    #[serde(rename = "interleaved")]
    Interleaved,
    /// All narratives, then all keyframes.
    #[serde(rename = "nar-first")]
    NarrativesFirst,
    /// All keyframes, then all narratives.
    #[serde(rename = "kf-first")]
    KeyframesFirst,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PlanItem {
    Frame { t: usize },
    Narrative { t: usize, text: String },
}

impl PlanItem {
    pub fn t(&self) -> usize {
        match self {
            PlanItem::Frame { t } | PlanItem::Narrative { t, .. } => *t,
        }
    }

    pub fn is_frame(&self) -> bool {
        matches!(self, PlanItem::Frame { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterleavePlan {
    pub scope: Scope,
    pub layout: Layout,
    /// `None` when no narratives are placed.
    pub delta: Option<usize>,
    pub items: Vec<PlanItem>,
}

impl InterleavePlan {
    pub fn frames(&self) -> impl Iterator<Item = usize> + '_ {
        self.items.iter().filter(|i| i.is_frame()).map(PlanItem::t)
    }

    pub fn narratives(&self) -> impl Iterator<Item = (usize, &str)> + '_ {
        self.items.iter().filter_map(|i| match i {
            PlanItem::Narrative { t, text } => Some((*t, text.as_str())),
            PlanItem::Frame { .. } => None,
        })
    }

    pub fn narrative_count(&self) -> usize {
        self.narratives().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadBudget {
    pub total_narratives: usize,
    /// Fixed stride; solved from the budget when absent.
    pub delta: Option<usize>,
}

impl Default for ThreadBudget {
    fn default() -> Self {
        Self {
            total_narratives: DEFAULT_NARRATIVE_BUDGET,
            delta: None,
        }
    }
}

fn check_keyframes(keyframes: &[usize], scope: Scope, n: usize) -> Result<()> {
    if keyframes.is_empty() {
        return Err(Error::EmptyKeyframes);
    }
    if keyframes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Unsorted);
    }
    let last = *keyframes.last().unwrap();
    if scope == Scope::FullVideo && last >= n {
        return Err(Error::IndexOutOfRange { index: last, n });
    }
    Ok(())
}

/// Free frames per span: each gap between keyframes, plus the leading and
/// trailing stretches under the full-video scope.
fn spans(keyframes: &[usize], scope: Scope, n: usize) -> Vec<usize> {
    let mut rooms: Vec<usize> = keyframes.windows(2).map(|w| w[1] - w[0] - 1).collect();
    if scope == Scope::FullVideo {
        rooms.push(keyframes[0]);
        rooms.push(n - 1 - keyframes[keyframes.len() - 1]);
    }
    rooms
}

/// Number of narratives stride `delta` places.
pub fn narrative_count(keyframes: &[usize], delta: usize, scope: Scope, n: usize) -> usize {
    spans(keyframes, scope, n).iter().map(|room| room / delta).sum()
}

/// Smallest stride whose narrative count fits in `budget`; `None` for a zero
/// budget.
pub fn solve_delta(keyframes: &[usize], budget: usize, scope: Scope, n: usize) -> Result<Option<usize>> {
    check_keyframes(keyframes, scope, n)?;
    if budget == 0 {
        return Ok(None);
    }
    let count = |d| narrative_count(keyframes, d, scope, n);
    if count(1) <= budget {
        return Ok(Some(1));
    }
    // count(lo) > budget and count(hi) == 0 throughout.
    let mut lo = 1;
    let mut hi = spans(keyframes, scope, n).into_iter().max().unwrap_or(0) + 1;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if count(mid) <= budget {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Some(hi))
}

/// Narrative timestamps for stride `delta`, ascending.
pub fn narrative_positions(keyframes: &[usize], delta: usize, scope: Scope, n: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let first = keyframes[0];
    let last = keyframes[keyframes.len() - 1];
    if scope == Scope::FullVideo {
        let mut before: Vec<usize> = (1..=first / delta).map(|m| first - m * delta).collect();
        before.reverse();
        out.extend(before);
    }
    for w in keyframes.windows(2) {
        out.extend((w[0] + delta..w[1]).step_by(delta));
    }
    if scope == Scope::FullVideo {
        out.extend((last + delta..n).step_by(delta));
    }
    out
}

/// Builds the keyframe/narrative sequence. `n_frames` bounds the trailing
/// span under [`Scope::FullVideo`] and is otherwise unused.
pub fn thread(
    keyframes: &[usize],
    captions: &CaptionSet,
    budget: &ThreadBudget,
    scope: Scope,
    layout: Layout,
    n_frames: usize,
) -> Result<InterleavePlan> {
    check_keyframes(keyframes, scope, n_frames)?;
    let delta = match budget.delta {
        Some(0) => return Err(Error::InvalidConfig("stride must be at least 1".into())),
        Some(d) => {
            let count = narrative_count(keyframes, d, scope, n_frames);
            if count > budget.total_narratives {
                return Err(Error::DeltaExceedsBudget {
                    delta: d,
                    count,
                    budget: budget.total_narratives,
                });
            }
            Some(d)
        }
        None => solve_delta(keyframes, budget.total_narratives, scope, n_frames)?,
    };

    let positions = delta.map_or_else(Vec::new, |d| {
        narrative_positions(keyframes, d, scope, n_frames)
    });
    let mut narratives = Vec::with_capacity(positions.len());
    for t in positions {
        let text = captions.get(t).ok_or(Error::MissingCaption(t))?;
        narratives.push(PlanItem::Narrative {
            t,
            text: text.to_owned(),
        });
    }
    let frames = keyframes.iter().map(|&t| PlanItem::Frame { t });

    let items = match layout {
        Layout::Interleaved => {
            let mut all: Vec<PlanItem> = frames.chain(narratives).collect();
            all.sort_by_key(PlanItem::t);
            all
        }
        Layout::NarrativesFirst => narratives.into_iter().chain(frames).collect(),
        Layout::KeyframesFirst => frames.chain(narratives).collect(),
    };
    Ok(InterleavePlan {
        scope,
        layout,
        delta,
        items,
    })
}

/// Text form of a plan: frames through `frame_token` with `{t}` replaced,
/// narratives as `[t=<t>] <text>`, one item per line.
pub fn render_plan(plan: &InterleavePlan, frame_token: &str) -> Result<String> {
    if !frame_token.contains("{t}") {
        return Err(Error::BadTemplate(frame_token.to_owned()));
    }
    let mut out = String::new();
    for item in &plan.items {
        match item {
            PlanItem::Frame { t } => out.push_str(&frame_token.replace("{t}", &t.to_string())),
            PlanItem::Narrative { t, text } => {
                out.push_str("[t=");
                out.push_str(&t.to_string());
                out.push_str("] ");
                out.push_str(text);
            }
        }
        out.push('\n');
    }
    Ok(out)
}
