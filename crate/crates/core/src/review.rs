//! Human verdicts on talking points and merge decisions.
//!
//! The verdict log is append-only. Every derived field (talking-point status,
//! merge lineage, flagged assignments) is recomputed from it by [`refresh`],
//! so replaying the same log always yields the same state.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consolidation::{merge_groups, pair_key, MergeGroup, SimilarityEdge, TpStatus};
use crate::corpus::Corpus;
use crate::state::RunState;

/// Number of assigned instances shown with a talking point under review.
pub const CONTEXT_INSTANCES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectKind {
    TalkingPoint,
    MergeGroup,
}

impl std::fmt::Display for SubjectKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SubjectKind::TalkingPoint => "talking_point",
            SubjectKind::MergeGroup => "merge_group",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub subject: SubjectKind,
    pub subject_id: String,
    /// 1 = correct, 0 = incorrect.
    pub score: u8,
    pub annotator: String,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Pending,
    Accepted,
    Rejected,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReviewError {
    #[error("unknown {kind} '{id}'")]
    UnknownSubject { kind: SubjectKind, id: String },
    #[error("score must be 0 or 1, got {0}")]
    InvalidScore(i64),
    #[error("talking point '{id}' was merged into '{into}'; review the merge instead")]
    MergedAway { id: String, into: String },
    #[error("annotator name is empty")]
    EmptyAnnotator,
}

/// Effective decision per subject: latest verdict per annotator, then the
/// majority over annotators; an even split stays pending.
pub fn decisions(verdicts: &[Verdict]) -> BTreeMap<(SubjectKind, String), Decision> {
    let mut latest: BTreeMap<(SubjectKind, &str), BTreeMap<&str, u8>> = BTreeMap::new();
    for v in verdicts {
        latest
            .entry((v.subject, v.subject_id.as_str()))
            .or_default()
            .insert(v.annotator.as_str(), v.score);
    }
    latest
        .into_iter()
        .map(|((kind, id), by_annotator)| {
            let yes = by_annotator.values().filter(|s| **s == 1).count();
            let no = by_annotator.len() - yes;
            let d = match yes.cmp(&no) {
                std::cmp::Ordering::Greater => Decision::Accepted,
                std::cmp::Ordering::Less => Decision::Rejected,
                std::cmp::Ordering::Equal => Decision::Pending,
            };
            ((kind, id.to_string()), d)
        })
        .collect()
}

pub fn decision_of(decided: &BTreeMap<(SubjectKind, String), Decision>, kind: SubjectKind, id: &str) -> Decision {
    decided
        .get(&(kind, id.to_string()))
        .copied()
        .unwrap_or(Decision::Pending)
}

/// Recomputes statuses, merge lineage and assignment flags from the merge
/// groups and the verdict log.
pub fn refresh(state: &mut RunState) {
    let decided = decisions(&state.verdicts);
    let dissolved: Vec<&MergeGroup> = state
        .merge_groups
        .iter()
        .filter(|g| decision_of(&decided, SubjectKind::MergeGroup, &g.id) == Decision::Rejected)
        .collect();
    let standing: Vec<MergeGroup> = state
        .merge_groups
        .iter()
        .filter(|g| decision_of(&decided, SubjectKind::MergeGroup, &g.id) != Decision::Rejected)
        .cloned()
        .collect();

    let mut tps = std::mem::take(&mut state.talking_points);
    for tp in &mut tps {
        tp.status = TpStatus::Generated;
        tp.merged_from.clear();
        tp.merged_into = None;
    }
    let mut tps = merge_groups(tps, &standing).expect("merge groups reference stored talking points");
    for tp in &mut tps {
        match decision_of(&decided, SubjectKind::TalkingPoint, &tp.id) {
            Decision::Rejected => tp.status = TpStatus::Rejected,
            Decision::Accepted if tp.status != TpStatus::MergedAway => tp.status = TpStatus::Verified,
            _ => {}
        }
    }
    state.talking_points = tps;

    for a in &mut state.assignments {
        a.flagged = dissolved
            .iter()
            .any(|g| g.representative == a.talking_point_id && a.iteration >= g.iteration);
    }
}

/// Member pairs of dissolved merge groups; they must not be merged again.
pub fn blocked_pairs(state: &RunState) -> BTreeSet<(String, String)> {
    let decided = decisions(&state.verdicts);
    let mut out = BTreeSet::new();
    for g in &state.merge_groups {
        if decision_of(&decided, SubjectKind::MergeGroup, &g.id) != Decision::Rejected {
            continue;
        }
        for (i, a) in g.members.iter().enumerate() {
            for b in &g.members[i + 1..] {
                out.insert(pair_key(a, b));
            }
        }
    }
    out
}

/// Validates and appends a verdict, then refreshes derived state.
pub fn submit_verdict(state: &mut RunState, verdict: Verdict) -> Result<(), ReviewError> {
    if verdict.score > 1 {
        return Err(ReviewError::InvalidScore(i64::from(verdict.score)));
    }
    if verdict.annotator.trim().is_empty() {
        return Err(ReviewError::EmptyAnnotator);
    }
    match verdict.subject {
        SubjectKind::TalkingPoint => {
            let tp = state
                .talking_point(&verdict.subject_id)
                .ok_or_else(|| ReviewError::UnknownSubject {
                    kind: verdict.subject,
                    id: verdict.subject_id.clone(),
                })?;
            if let (TpStatus::MergedAway, Some(into)) = (tp.status, &tp.merged_into) {
                return Err(ReviewError::MergedAway {
                    id: tp.id.clone(),
                    into: into.clone(),
                });
            }
        }
        SubjectKind::MergeGroup => {
            if !state.merge_groups.iter().any(|g| g.id == verdict.subject_id) {
                return Err(ReviewError::UnknownSubject {
                    kind: verdict.subject,
                    id: verdict.subject_id,
                });
            }
        }
    }
    state.verdicts.push(verdict);
    refresh(state);
    state.touch();
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatusFilter {
    #[default]
    Pending,
    Verified,
    Rejected,
    All,
}

impl std::str::FromStr for StatusFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pending" => Ok(StatusFilter::Pending),
            "verified" | "accepted" => Ok(StatusFilter::Verified),
            "rejected" | "dissolved" => Ok(StatusFilter::Rejected),
            "all" => Ok(StatusFilter::All),
            other => Err(format!("unknown status filter '{other}'")),
        }
    }
}

impl StatusFilter {
    fn admits(self, d: Decision) -> bool {
        match self {
            StatusFilter::Pending => d == Decision::Pending,
            StatusFilter::Verified => d == Decision::Accepted,
            StatusFilter::Rejected => d == Decision::Rejected,
            StatusFilter::All => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextInstance {
    pub instance_id: String,
    pub text: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TalkingPointItem {
    pub id: String,
    pub theme: String,
    pub text: String,
    pub summary: Option<String>,
    pub iteration: u32,
    pub status: TpStatus,
    pub decision: Decision,
    pub merged_from: Vec<String>,
    /// Closest assigned instances, nearest first.
    pub nearest_instances: Vec<ContextInstance>,
    pub verdicts: Vec<Verdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberText {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeItem {
    pub id: String,
    pub theme: String,
    pub iteration: u32,
    pub representative: String,
    pub members: Vec<MemberText>,
    pub edges: Vec<SimilarityEdge>,
    pub decision: Decision,
    pub verdicts: Vec<Verdict>,
}

fn verdicts_for(state: &RunState, kind: SubjectKind, id: &str) -> Vec<Verdict> {
    state
        .verdicts
        .iter()
        .filter(|v| v.subject == kind && v.subject_id == id)
        .cloned()
        .collect()
}

/// Talking points open for review (merged-away points are reviewed through
/// their merge group). `corpus` supplies context texts when available.
pub fn list_talking_points(state: &RunState, corpus: Option<&Corpus>, filter: StatusFilter) -> Vec<TalkingPointItem> {
    let decided = decisions(&state.verdicts);
    let mut by_tp: BTreeMap<&str, Vec<&crate::assignment::Assignment>> = BTreeMap::new();
    for a in &state.assignments {
        by_tp.entry(a.talking_point_id.as_str()).or_default().push(a);
    }
    state
        .talking_points
        .iter()
        .filter(|tp| tp.status != TpStatus::MergedAway)
        .filter_map(|tp| {
            let decision = decision_of(&decided, SubjectKind::TalkingPoint, &tp.id);
            if !filter.admits(decision) {
                return None;
            }
            let mut near: Vec<&crate::assignment::Assignment> = by_tp.get(tp.id.as_str()).cloned().unwrap_or_default();
            near.sort_by(|a, b| {
                a.distance
                    .total_cmp(&b.distance)
                    .then(a.instance_id.cmp(&b.instance_id))
            });
            let nearest_instances = near
                .into_iter()
                .take(CONTEXT_INSTANCES)
                .map(|a| ContextInstance {
                    instance_id: a.instance_id.clone(),
                    text: corpus
                        .and_then(|c| c.get(&a.instance_id))
                        .map(|i| i.text.clone())
                        .unwrap_or_default(),
                    distance: a.distance,
                })
                .collect();
            Some(TalkingPointItem {
                id: tp.id.clone(),
                theme: tp.theme.clone(),
                text: tp.text.clone(),
                summary: tp.summary.clone(),
                iteration: tp.iteration,
                status: tp.status,
                decision,
                merged_from: tp.merged_from.clone(),
                nearest_instances,
                verdicts: verdicts_for(state, SubjectKind::TalkingPoint, &tp.id),
            })
        })
        .collect()
}

pub fn list_merges(state: &RunState, filter: StatusFilter) -> Vec<MergeItem> {
    let decided = decisions(&state.verdicts);
    let text_of = |id: &str| state.talking_point(id).map(|t| t.text.clone()).unwrap_or_default();
    state
        .merge_groups
        .iter()
        .filter_map(|g| {
            let decision = decision_of(&decided, SubjectKind::MergeGroup, &g.id);
            filter.admits(decision).then(|| MergeItem {
                id: g.id.clone(),
                theme: g.theme.clone(),
                iteration: g.iteration,
                representative: g.representative.clone(),
                members: g
                    .members
                    .iter()
                    .map(|m| MemberText {
                        id: m.clone(),
                        text: text_of(m),
                    })
                    .collect(),
                edges: g.edges.clone(),
                decision,
                verdicts: verdicts_for(state, SubjectKind::MergeGroup, &g.id),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub pending: usize,
    pub verified: usize,
    pub rejected: usize,
}

impl Counts {
    fn add(&mut self, d: Decision) {
        match d {
            Decision::Pending => self.pending += 1,
            Decision::Accepted => self.verified += 1,
            Decision::Rejected => self.rejected += 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub talking_points: Counts,
    pub merges: Counts,
    pub by_theme: BTreeMap<String, Counts>,
}

pub fn progress(state: &RunState) -> Progress {
    let decided = decisions(&state.verdicts);
    let mut p = Progress::default();
    for theme in &state.themes {
        p.by_theme.insert(theme.clone(), Counts::default());
    }
    for tp in state.talking_points.iter().filter(|t| t.status != TpStatus::MergedAway) {
        let d = decision_of(&decided, SubjectKind::TalkingPoint, &tp.id);
        p.talking_points.add(d);
        p.by_theme.entry(tp.theme.clone()).or_default().add(d);
    }
    for g in &state.merge_groups {
        p.merges.add(decision_of(&decided, SubjectKind::MergeGroup, &g.id));
    }
    p
}
