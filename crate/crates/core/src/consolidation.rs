//! Redundancy detection among talking points: threshold graph, connected
//! components, medoid representatives.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vectorspace::Embedding;

pub const DEFAULT_MERGE_THRESHOLD: f64 = 0.70;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MergeError {
    #[error("talking points span several themes ({0:?}) but merge scope is per theme")]
    MixedThemes(Vec<String>),
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("merge group references unknown talking point '{0}'")]
    UnknownMember(String),
    #[error("embedding dimensions differ between talking points")]
    DimensionMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TpStatus {
    Generated,
    MergedRepresentative,
    MergedAway,
    Verified,
    Rejected,
}

impl TpStatus {
    /// Whether instances may be assigned to a talking point in this state.
    pub fn is_active(self) -> bool {
        matches!(
            self,
            TpStatus::Generated | TpStatus::MergedRepresentative | TpStatus::Verified
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TalkingPoint {
    pub id: String,
    pub theme: String,
    pub text: String,
    pub embedding: Embedding,
    pub iteration: u32,
    pub status: TpStatus,
    #[serde(default)]
    pub merged_from: Vec<String>,
    /// Set exactly when the point was merged away.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merged_into: Option<String>,
    #[serde(default)]
    pub source_subclusters: Vec<String>,
    /// Summary the point was generated from, when summarization ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

impl TalkingPoint {
    pub fn is_active(&self) -> bool {
        self.status.is_active()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityEdge {
    pub a: String,
    pub b: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeGroup {
    pub id: String,
    pub theme: String,
    /// Sorted member ids.
    pub members: Vec<String>,
    pub representative: String,
    /// Edges at or above the threshold inside the component.
    pub edges: Vec<SimilarityEdge>,
    #[serde(default)]
    pub iteration: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeScope {
    #[default]
    Theme,
    Global,
}

#[derive(Debug, Clone, Copy)]
pub struct GroupingOptions<'a> {
    pub threshold: f64,
    pub scope: MergeScope,
    /// Unordered id pairs that must never be joined by an edge.
    pub blocked: Option<&'a BTreeSet<(String, String)>>,
    /// When a group contains any of these ids, the representative is chosen
    /// among them only.
    pub incumbents: Option<&'a BTreeSet<String>>,
}

impl GroupingOptions<'_> {
    pub fn new(threshold: f64) -> Self {
        GroupingOptions {
            threshold,
            scope: MergeScope::Theme,
            blocked: None,
            incumbents: None,
        }
    }
}

/// Member indices, representative index and the (i, j, similarity) edges
/// of one connected group.
pub type Component = (Vec<usize>, usize, Vec<(usize, usize, f64)>);

/// Normalized unordered pair key.
pub fn pair_key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

/// Connected components (size ≥ 2) of the graph with an edge wherever
/// `sim(i, j) >= threshold`. Representatives are medoids, lowest id on ties.
///
/// `ids` must be distinct; `sim` must be symmetric.
pub fn groups_from_similarity(
    ids: &[&str],
    sim: impl Fn(usize, usize) -> f64,
    threshold: f64,
    blocked: Option<&BTreeSet<(String, String)>>,
    incumbents: Option<&BTreeSet<String>>,
) -> Vec<Component> {
    let n = ids.len();
    let mut uf = UnionFind::new(n);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if blocked.is_some_and(|b| b.contains(&pair_key(ids[i], ids[j]))) {
                continue;
            }
            let s = sim(i, j);
            if s >= threshold {
                uf.union(i, j);
                edges.push((i, j, s));
            }
        }
    }
    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = uf.find(i);
        components.entry(root).or_default().push(i);
    }
    let mut out: Vec<Component> = components
        .into_values()
        .filter(|members| members.len() > 1)
        .map(|mut members| {
            members.sort_by(|a, b| ids[*a].cmp(ids[*b]));
            let eligible: Vec<usize> = match incumbents {
                Some(inc) if members.iter().any(|m| inc.contains(ids[*m])) => {
                    members.iter().copied().filter(|m| inc.contains(ids[*m])).collect()
                }
                _ => members.clone(),
            };
            let rep = medoid(&members, &eligible, ids, &sim);
            let set: BTreeSet<usize> = members.iter().copied().collect();
            let mut group_edges: Vec<(usize, usize, f64)> = edges
                .iter()
                .filter(|(a, _, _)| set.contains(a))
                .map(|&(a, b, s)| if ids[a] <= ids[b] { (a, b, s) } else { (b, a, s) })
                .collect();
            group_edges.sort_by(|x, y| ids[x.0].cmp(ids[y.0]).then(ids[x.1].cmp(ids[y.1])));
            (members, rep, group_edges)
        })
        .collect();
    out.sort_by(|a, b| ids[a.0[0]].cmp(ids[b.0[0]]));
    out
}

/// Member of `eligible` with the highest mean similarity to the other
/// members of the group; lowest id on ties.
fn medoid(members: &[usize], eligible: &[usize], ids: &[&str], sim: &impl Fn(usize, usize) -> f64) -> usize {
    let mut best: Option<(f64, usize)> = None;
    for &c in eligible {
        let others = members.iter().filter(|m| **m != c);
        let total: f64 = others.clone().map(|&m| sim(c, m)).sum();
        let mean = total / others.count().max(1) as f64;
        let better = match best {
            None => true,
            Some((bm, bi)) => mean > bm || (mean == bm && ids[c] < ids[bi]),
        };
        if better {
            best = Some((mean, c));
        }
    }
    best.expect("non-empty group").1
}

pub fn similarity_groups(tps: &[TalkingPoint], threshold: f64) -> Result<Vec<MergeGroup>, MergeError> {
    similarity_groups_with(tps, GroupingOptions::new(threshold))
}

pub fn similarity_groups_with(
    tps: &[TalkingPoint],
    options: GroupingOptions<'_>,
) -> Result<Vec<MergeGroup>, MergeError> {
    if !(options.threshold > 0.0 && options.threshold <= 1.0) {
        return Err(MergeError::InvalidThreshold(options.threshold));
    }
    let themes: BTreeSet<&str> = tps.iter().map(|t| t.theme.as_str()).collect();
    if options.scope == MergeScope::Theme && themes.len() > 1 {
        return Err(MergeError::MixedThemes(themes.into_iter().map(String::from).collect()));
    }
    if let Some(first) = tps.first() {
        let dim = first.embedding.dimension();
        if tps.iter().any(|t| t.embedding.dimension() != dim) {
            return Err(MergeError::DimensionMismatch);
        }
    }
    let ids: Vec<&str> = tps.iter().map(|t| t.id.as_str()).collect();
    let n = tps.len();
    let mut matrix = vec![0.0; n * n];
    for i in 0..n {
        matrix[i * n + i] = 1.0;
        for j in i + 1..n {
            let s = tps[i]
                .embedding
                .similarity(&tps[j].embedding)
                .map_err(|_| MergeError::DimensionMismatch)?;
            matrix[i * n + j] = s;
            matrix[j * n + i] = s;
        }
    }
    let raw = groups_from_similarity(
        &ids,
        |i, j| matrix[i * n + j],
        options.threshold,
        options.blocked,
        options.incumbents,
    );
    Ok(raw
        .into_iter()
        .enumerate()
        .map(|(g, (members, rep, edges))| {
            let theme = if themes.len() == 1 {
                tps[members[0]].theme.clone()
            } else {
                let set: BTreeSet<&str> = members.iter().map(|m| tps[*m].theme.as_str()).collect();
                set.into_iter().collect::<Vec<_>>().join("+")
            };
            MergeGroup {
                id: format!("mg-{g}"),
                theme,
                members: members.iter().map(|m| ids[*m].to_string()).collect(),
                representative: ids[rep].to_string(),
                edges: edges
                    .into_iter()
                    .map(|(a, b, s)| SimilarityEdge {
                        a: ids[a].to_string(),
                        b: ids[b].to_string(),
                        similarity: s,
                    })
                    .collect(),
                iteration: 0,
            }
        })
        .collect())
}

/// Applies merge groups: the representative records the other members in
/// `merged_from`; the others are marked merged away. Texts are untouched.
pub fn merge_groups(mut tps: Vec<TalkingPoint>, groups: &[MergeGroup]) -> Result<Vec<TalkingPoint>, MergeError> {
    let index: BTreeMap<String, usize> = tps.iter().enumerate().map(|(i, t)| (t.id.clone(), i)).collect();
    for group in groups {
        for member in group.members.iter().chain(std::iter::once(&group.representative)) {
            if !index.contains_key(member) {
                return Err(MergeError::UnknownMember(member.clone()));
            }
        }
        let rep = index[&group.representative];
        for member in &group.members {
            if *member == group.representative {
                continue;
            }
            let m = index[member];
            tps[m].merged_into = Some(group.representative.clone());
            tps[m].status = TpStatus::MergedAway;
            if !tps[rep].merged_from.contains(member) {
                tps[rep].merged_from.push(member.clone());
            }
        }
        tps[rep].merged_from.sort();
        if tps[rep].status == TpStatus::Generated {
            tps[rep].status = TpStatus::MergedRepresentative;
        }
    }
    Ok(tps)
}
