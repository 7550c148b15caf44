use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::assignment::Assignment;
use crate::consolidation::TalkingPoint;
use crate::corpus::Corpus;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StanceRecord {
    pub instance_id: String,
    pub text: String,
    pub talking_point: String,
    pub stance: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StanceSplits {
    pub train: Vec<StanceRecord>,
    pub validation: Vec<StanceRecord>,
    pub test: Vec<StanceRecord>,
    /// Labeled instances left out for lacking an assignment.
    pub unassigned_excluded: usize,
}

impl StanceSplits {
    pub fn write_jsonl<W: Write>(records: &[StanceRecord], mut out: W) -> std::io::Result<()> {
        for r in records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// (talking point, text, stance) records split train/validation/test,
/// stratified by stance. `stances` restricts which aux labels count as
/// stances; `None` accepts any.
///
/// Each stance group is shuffled with the seeded RNG, its j-th record gets
/// the key `(j + 0.5) / group size`, and the records are ordered by key
/// before cutting at the rounded split sizes. Every prefix of that order
/// holds each stance in proportion, to within one record.
pub fn export_stance_dataset(
    assignments: &[Assignment],
    corpus: &Corpus,
    talking_points: &[TalkingPoint],
    stances: Option<&[String]>,
    split: SplitFractions,
    seed: u64,
) -> Result<StanceSplits, AnalysisError> {
    let fractions = [split.train, split.validation, split.test];
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(AnalysisError::InvalidSplit);
    }
    let tp_text: BTreeMap<&str, &str> = talking_points
        .iter()
        .map(|t| (t.id.as_str(), t.text.as_str()))
        .collect();
    let assigned: BTreeMap<&str, &str> = assignments
        .iter()
        .map(|a| (a.instance_id.as_str(), a.talking_point_id.as_str()))
        .collect();

    let mut groups: BTreeMap<String, Vec<StanceRecord>> = BTreeMap::new();
    let mut unassigned_excluded = 0;
    for inst in corpus.instances() {
        let Some(stance) = inst.aux_label.as_ref() else {
            continue;
        };
        if stances.is_some_and(|s| !s.contains(stance)) {
            continue;
        }
        let Some(tp) = assigned.get(inst.id.as_str()) else {
            unassigned_excluded += 1;
            continue;
        };
        groups.entry(stance.clone()).or_default().push(StanceRecord {
            instance_id: inst.id.clone(),
            text: inst.text.clone(),
            talking_point: tp_text.get(tp).copied().unwrap_or_default().to_string(),
            stance: stance.clone(),
        });
    }
    if unassigned_excluded > 0 {
        tracing::info!(
            unassigned_excluded,
            "stance-labeled instances without an assignment were excluded"
        );
    }
    if groups.is_empty() {
        return Err(AnalysisError::NoStanceLabels);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keyed: Vec<(f64, usize, StanceRecord)> = Vec::new();
    for (g, (_, mut records)) in groups.into_iter().enumerate() {
        records.shuffle(&mut rng);
        let n = records.len() as f64;
        keyed.extend(
            records
                .into_iter()
                .enumerate()
                .map(|(j, r)| ((j as f64 + 0.5) / n, g, r)),
        );
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let total = keyed.len();
    let n_train = (split.train * total as f64).round() as usize;
    let n_val = ((split.validation * total as f64).round() as usize).min(total - n_train);
    let mut records = keyed.into_iter().map(|(_, _, r)| r);
    let train: Vec<_> = records.by_ref().take(n_train).collect();
    let validation: Vec<_> = records.by_ref().take(n_val).collect();
    let test: Vec<_> = records.collect();
    Ok(StanceSplits {
        train,
        validation,
        test,
        unassigned_excluded,
    })
}
