//! Instance to talking-point mapping and coverage accounting.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consolidation::TalkingPoint;
use crate::corpus::{Corpus, Instance};
use crate::vectorspace::{Embedding, VectorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AssignError {
    #[error("no embedding for instance '{0}'")]
    MissingEmbedding(String),
    #[error("assignment references instance '{0}' which is not in the corpus")]
    ForeignId(String),
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("cannot compare instance '{instance}' with talking point '{talking_point}': {source}")]
    Vector {
        instance: String,
        talking_point: String,
        #[source]
        source: VectorError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub instance_id: String,
    pub talking_point_id: String,
    /// Cosine distance between the instance and the talking point.
    pub distance: f64,
    pub iteration: u32,
    /// Made through a representative whose merge was later dissolved.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub flagged: bool,
}

/// Maps each instance to the nearest active talking point of its theme
/// (lowest id on equal distance). Only strictly sub-threshold distances are
/// kept; the rest are returned as unassigned ids, in input order.
pub fn assign(
    instances: &[&Instance],
    embeddings: &BTreeMap<String, Embedding>,
    talking_points: &[TalkingPoint],
    threshold: f64,
    iteration: u32,
) -> Result<(Vec<Assignment>, Vec<String>), AssignError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(AssignError::InvalidThreshold(threshold));
    }
    let mut by_theme: BTreeMap<&str, Vec<&TalkingPoint>> = BTreeMap::new();
    for tp in talking_points.iter().filter(|t| t.is_active()) {
        by_theme.entry(tp.theme.as_str()).or_default().push(tp);
    }
    for tps in by_theme.values_mut() {
        tps.sort_by(|a, b| a.id.cmp(&b.id));
    }

    let mut assigned = Vec::new();
    let mut unassigned = Vec::new();
    for inst in instances {
        let Some(candidates) = by_theme.get(inst.theme.as_str()) else {
            unassigned.push(inst.id.clone());
            continue;
        };
        let emb = embeddings
            .get(&inst.id)
            .ok_or_else(|| AssignError::MissingEmbedding(inst.id.clone()))?;
        let mut best: Option<(f64, &TalkingPoint)> = None;
        for tp in candidates {
            let d = emb.distance(&tp.embedding).map_err(|source| AssignError::Vector {
                instance: inst.id.clone(),
                talking_point: tp.id.clone(),
                source,
            })?;
            // candidates are id-sorted, so strict < keeps the lowest id on ties
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, tp));
            }
        }
        match best {
            Some((d, tp)) if d < threshold => assigned.push(Assignment {
                instance_id: inst.id.clone(),
                talking_point_id: tp.id.clone(),
                distance: d,
                iteration,
                flagged: false,
            }),
            _ => unassigned.push(inst.id.clone()),
        }
    }
    Ok((assigned, unassigned))
}

/// Fraction of the corpus with at least one assignment.
pub fn coverage(assignments: &[Assignment], corpus: &Corpus) -> Result<f64, AssignError> {
    let index = corpus.index();
    let mut covered = BTreeSet::new();
    for a in assignments {
        if !index.contains_key(a.instance_id.as_str()) {
            return Err(AssignError::ForeignId(a.instance_id.clone()));
        }
        covered.insert(a.instance_id.as_str());
    }
    if corpus.is_empty() {
        return Ok(0.0);
    }
    Ok(covered.len() as f64 / corpus.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub covered: usize,
    pub coverage: f64,
}

/// Re-runs assignment of the whole corpus against the given talking points
/// at each threshold.
pub fn threshold_sweep(
    corpus: &Corpus,
    embeddings: &BTreeMap<String, Embedding>,
    talking_points: &[TalkingPoint],
    thresholds: &[f64],
) -> Result<Vec<SweepPoint>, AssignError> {
    let instances: Vec<&Instance> = corpus.instances().iter().collect();
    thresholds
        .iter()
        .map(|&t| {
            let (assigned, _) = assign(&instances, embeddings, talking_points, t, 0)?;
            Ok(SweepPoint {
                threshold: t,
                covered: assigned.len(),
                coverage: if corpus.is_empty() {
                    0.0
                } else {
                    assigned.len() as f64 / corpus.len() as f64
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::consolidation::TpStatus;
    use crate::corpus::ThemeRegistry;

    fn tp(id: &str, theme: &str, v: Vec<f64>, status: TpStatus) -> TalkingPoint {
        TalkingPoint {
            id: id.into(),
            theme: theme.into(),
            text: id.into(),
            embedding: Embedding::normalized(v).unwrap(),
            iteration: 1,
            status,
            merged_from: vec![],
            merged_into: None,
            source_subclusters: vec![],
            summary: None,
        }
    }

    fn emb(pairs: &[(&str, Vec<f64>)]) -> BTreeMap<String, Embedding> {
        pairs
            .iter()
            .map(|(id, v)| (id.to_string(), Embedding::normalized(v.clone()).unwrap()))
            .collect()
    }

    #[test]
    fn identical_embedding_assigned_at_zero() {
        let i = Instance::new("i", "T", "x");
        let e = emb(&[("i", vec![1.0, 2.0])]);
        let tps = [tp("t", "T", vec![1.0, 2.0], TpStatus::Generated)];
        let (a, u) = assign(&[&i], &e, &tps, 0.5, 1).unwrap();
        assert!(u.is_empty());
        assert!(a[0].distance.abs() < 1e-12);
    }

    #[test]
    fn threshold_is_strict() {
        // cos 60° = 0.5, distance exactly 0.5
        let i = Instance::new("i", "T", "x");
        let e = emb(&[("i", vec![1.0, 0.0])]);
        let tps = [tp("t", "T", vec![0.5, 0.75f64.sqrt()], TpStatus::Generated)];
        let d = e["i"].distance(&tps[0].embedding).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
        let (a, u) = assign(&[&i], &e, &tps, d, 1).unwrap();
        assert!(a.is_empty());
        assert_eq!(u, ["i"]);
    }

    #[test]
    fn theme_without_points_leaves_everything_unassigned() {
        let i = Instance::new("i", "Other", "x");
        let (a, u) = assign(
            &[&i],
            &BTreeMap::new(),
            &[tp("t", "T", vec![1.0], TpStatus::Generated)],
            0.5,
            1,
        )
        .unwrap();
        assert!(a.is_empty());
        assert_eq!(u, ["i"]);
    }

    #[test]
    fn inactive_points_and_ties() {
        let i = Instance::new("i", "T", "x");
        let e = emb(&[("i", vec![1.0, 0.0])]);
        let tps = [
            tp("b", "T", vec![1.0, 0.1], TpStatus::Generated),
            tp("a", "T", vec![1.0, -0.1], TpStatus::Verified),
            tp("z", "T", vec![1.0, 0.0], TpStatus::Rejected),
            tp("y", "T", vec![1.0, 0.0], TpStatus::MergedAway),
        ];
        let (a, _) = assign(&[&i], &e, &tps, 0.5, 2).unwrap();
        assert_eq!(a[0].talking_point_id, "a");
        assert_eq!(a[0].iteration, 2);
    }

    #[test]
    fn missing_embedding_is_an_error() {
        let i = Instance::new("i", "T", "x");
        let tps = [tp("t", "T", vec![1.0], TpStatus::Generated)];
        assert_eq!(
            assign(&[&i], &BTreeMap::new(), &tps, 0.5, 1),
            Err(AssignError::MissingEmbedding("i".into()))
        );
    }

    #[test]
    fn coverage_counts_distinct_ids() {
        let corpus = Corpus::new(
            vec![Instance::new("a", "T", "x"), Instance::new("b", "T", "y")],
            ThemeRegistry::new(["T"]).unwrap(),
        )
        .unwrap();
        let mk = |id: &str| Assignment {
            instance_id: id.into(),
            talking_point_id: "t".into(),
            distance: 0.1,
            iteration: 1,
            flagged: false,
        };
        assert_eq!(coverage(&[], &corpus).unwrap(), 0.0);
        assert_eq!(coverage(&[mk("a")], &corpus).unwrap(), 0.5);
        assert_eq!(coverage(&[mk("a"), mk("b")], &corpus).unwrap(), 1.0);
        assert_eq!(coverage(&[mk("q")], &corpus), Err(AssignError::ForeignId("q".into())));
    }
}
