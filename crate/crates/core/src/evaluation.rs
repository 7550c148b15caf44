//! Quartile-stratified review sampling and the banded mapping-quality report.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{coverage, Assignment};
use crate::consolidation::TalkingPoint;
use crate::corpus::Corpus;
use crate::vectorspace::fnv1a64;

pub const DEFAULT_PER_BIN: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no values to compute quartiles from")]
    EmptyInput,
    #[error("there are no assignments to sample from")]
    NoAssignments,
    #[error("sample ({instance_id}, {talking_point_id}) has no label")]
    UnlabeledSample {
        instance_id: String,
        talking_point_id: String,
    },
    #[error("labels file line {line}: {message}")]
    Labels { line: usize, message: String },
    #[error("assignment references unknown talking point '{0}'")]
    UnknownTalkingPoint(String),
}

/// Quantile by linear interpolation at position `(n - 1) * q` of the sorted
/// values.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

pub fn quartiles(values: &[f64]) -> Result<(f64, f64, f64), EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((
        quantile_sorted(&sorted, 0.25),
        quantile_sorted(&sorted, 0.5),
        quantile_sorted(&sorted, 0.75),
    ))
}

/// Bin 1..=4 for bins `[min,q1) [q1,q2) [q2,q3) [q3,max]`.
pub fn quartile_bin(distance: f64, (q1, q2, q3): (f64, f64, f64)) -> u8 {
    if distance < q1 {
        1
    } else if distance < q2 {
        2
    } else if distance < q3 {
        3
    } else {
        4
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewSample {
    pub instance_id: String,
    pub talking_point_id: String,
    pub theme: String,
    pub distance: f64,
    pub quartile_bin: u8,
    #[serde(default)]
    pub human_label: Option<u8>,
}

/// Every assignment with its per-theme quartile bin, grouped by theme
/// (sorted) and ordered by distance within a theme.
pub fn bin_assignments(
    assignments: &[Assignment],
    talking_points: &[TalkingPoint],
) -> Result<BTreeMap<String, Vec<ReviewSample>>, EvalError> {
    let theme_of: BTreeMap<&str, &str> = talking_points
        .iter()
        .map(|t| (t.id.as_str(), t.theme.as_str()))
        .collect();
    let mut by_theme: BTreeMap<String, Vec<&Assignment>> = BTreeMap::new();
    for a in assignments {
        let theme = theme_of
            .get(a.talking_point_id.as_str())
            .ok_or_else(|| EvalError::UnknownTalkingPoint(a.talking_point_id.clone()))?;
        by_theme.entry(theme.to_string()).or_default().push(a);
    }
    let mut out = BTreeMap::new();
    for (theme, mut list) in by_theme {
        list.sort_by(|a, b| {
            a.distance
                .total_cmp(&b.distance)
                .then(a.instance_id.cmp(&b.instance_id))
        });
        let distances: Vec<f64> = list.iter().map(|a| a.distance).collect();
        let q = quartiles(&distances)?;
        let samples = list
            .into_iter()
            .map(|a| ReviewSample {
                instance_id: a.instance_id.clone(),
                talking_point_id: a.talking_point_id.clone(),
                theme: theme.clone(),
                distance: a.distance,
                quartile_bin: quartile_bin(a.distance, q),
                human_label: None,
            })
            .collect();
        out.insert(theme, samples);
    }
    Ok(out)
}

fn theme_seed(seed: u64, theme: &str) -> u64 {
    fnv1a64(fnv1a64(0xcbf2_9ce4_8422_2325, &seed.to_le_bytes()), theme.as_bytes())
}

/// Draws up to `per_bin` assignments from each quartile bin of each theme,
/// without replacement. Each theme has its own RNG stream derived from
/// `seed` and the theme name.
pub fn sample_for_review(
    assignments: &[Assignment],
    talking_points: &[TalkingPoint],
    per_bin: usize,
    seed: u64,
) -> Result<Vec<ReviewSample>, EvalError> {
    if assignments.is_empty() {
        return Err(EvalError::NoAssignments);
    }
    let mut out = Vec::new();
    for (theme, samples) in bin_assignments(assignments, talking_points)? {
        let mut rng = ChaCha8Rng::seed_from_u64(theme_seed(seed, &theme));
        for bin in 1..=4u8 {
            let members: Vec<&ReviewSample> = samples.iter().filter(|s| s.quartile_bin == bin).collect();
            let mut picked: Vec<&ReviewSample> = members.choose_multiple(&mut rng, per_bin).copied().collect();
            picked.sort_by(|a, b| {
                a.distance
                    .total_cmp(&b.distance)
                    .then(a.instance_id.cmp(&b.instance_id))
            });
            out.extend(picked.into_iter().cloned());
        }
    }
    Ok(out)
}

/// One ingested human label. The store is an append-only log; the latest
/// record per (instance, talking point) is effective.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub instance_id: String,
    pub talking_point_id: String,
    pub label: u8,
    pub source: String,
    pub recorded_at: DateTime<Utc>,
}

pub fn effective_labels(log: &[LabelRecord]) -> BTreeMap<(String, String), u8> {
    log.iter()
        .map(|r| ((r.instance_id.clone(), r.talking_point_id.clone()), r.label))
        .collect()
}

/// (instance id, talking point id).
pub type LabelKey = (String, String);

/// Binned assignments that carry an effective label. Labels for pairs that
/// are not current assignments are returned separately.
pub fn labeled_samples(
    assignments: &[Assignment],
    talking_points: &[TalkingPoint],
    labels: &BTreeMap<(String, String), u8>,
) -> Result<(Vec<ReviewSample>, Vec<LabelKey>), EvalError> {
    let mut out = Vec::new();
    let mut matched = std::collections::BTreeSet::new();
    for (_, samples) in bin_assignments(assignments, talking_points)? {
        for mut s in samples {
            let key = (s.instance_id.clone(), s.talking_point_id.clone());
            if let Some(l) = labels.get(&key) {
                s.human_label = Some(*l);
                matched.insert(key);
                out.push(s);
            }
        }
    }
    let stray = labels.keys().filter(|k| !matched.contains(*k)).cloned().collect();
    Ok((out, stray))
}

/// Reads `instance_id,talking_point_id,label` rows (header required).
pub fn read_labels_csv<R: Read>(reader: R) -> Result<Vec<(String, String, u8)>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| EvalError::Labels {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| EvalError::Labels {
            line: 1,
            message: format!("missing column '{name}'"),
        })
    };
    let (ci, ct, cl) = (col("instance_id")?, col("talking_point_id")?, col("label")?);
    let mut out = Vec::new();
    for (n, row) in rdr.records().enumerate() {
        let line = n + 2;
        let row = row.map_err(|e| EvalError::Labels {
            line,
            message: e.to_string(),
        })?;
        let label = match row.get(cl) {
            Some("1") => 1,
            Some("0") => 0,
            other => {
                return Err(EvalError::Labels {
                    line,
                    message: format!("label must be 0 or 1, got {:?}", other.unwrap_or("")),
                })
            }
        };
        let field = |i: usize| row.get(i).unwrap_or("").to_string();
        out.push((field(ci), field(ct), label));
    }
    Ok(out)
}

pub fn write_samples_csv<W: Write>(
    samples: &[ReviewSample],
    corpus: Option<&Corpus>,
    tps: &[TalkingPoint],
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "instance_id",
        "talking_point_id",
        "theme",
        "distance",
        "quartile_bin",
        "instance_text",
        "talking_point_text",
        "label",
    ])?;
    let tp_text: BTreeMap<&str, &str> = tps.iter().map(|t| (t.id.as_str(), t.text.as_str())).collect();
    for s in samples {
        let text = corpus
            .and_then(|c| c.get(&s.instance_id))
            .map(|i| i.text.as_str())
            .unwrap_or("");
        w.write_record([
            s.instance_id.as_str(),
            s.talking_point_id.as_str(),
            s.theme.as_str(),
            &format!("{:.6}", s.distance),
            &s.quartile_bin.to_string(),
            text,
            tp_text.get(s.talking_point_id.as_str()).copied().unwrap_or(""),
            &s.human_label.map(|l| l.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Macro-averaged F1 over the classes present in gold or predicted labels.
/// A class with no true positives scores 0.
pub fn macro_f1(gold: &[u8], pred: &[u8]) -> f64 {
    let mut classes: Vec<u8> = gold.iter().chain(pred).copied().collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return 0.0;
    }
    let total: f64 = classes
        .iter()
        .map(|&c| {
            let tp = gold.iter().zip(pred).filter(|(g, p)| **g == c && **p == c).count() as f64;
            let fp = gold.iter().zip(pred).filter(|(g, p)| **g != c && **p == c).count() as f64;
            let fn_ = gold.iter().zip(pred).filter(|(g, p)| **g == c && **p != c).count() as f64;
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fn_)
            }
        })
        .sum();
    total / classes.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandScore {
    pub band: String,
    /// Highest quartile bin included in the band.
    pub max_bin: u8,
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub bands: Vec<BandScore>,
    pub coverage: f64,
    pub iteration: u32,
}

/// Scores labeled samples in the cumulative bands ≤Q1, ≤Q2, ≤Q3 and All.
/// The human label is the gold class and every sampled mapping counts as a
/// "correct" prediction.
pub fn score_report(
    samples: &[ReviewSample],
    assignments: &[Assignment],
    corpus: &Corpus,
) -> Result<QualityReport, EvalError> {
    let mut labeled = Vec::with_capacity(samples.len());
    for s in samples {
        let label = s.human_label.ok_or_else(|| EvalError::UnlabeledSample {
            instance_id: s.instance_id.clone(),
            talking_point_id: s.talking_point_id.clone(),
        })?;
        labeled.push((s.quartile_bin, label));
    }
    let bands = [("<=Q1", 1u8), ("<=Q2", 2), ("<=Q3", 3), ("All", 4)]
        .into_iter()
        .map(|(name, max_bin)| {
            let gold: Vec<u8> = labeled
                .iter()
                .filter(|(bin, _)| *bin <= max_bin)
                .map(|(_, l)| *l)
                .collect();
            let n = gold.len();
            let accuracy = if n == 0 {
                0.0
            } else {
                gold.iter().map(|l| f64::from(*l)).sum::<f64>() / n as f64
            };
            let pred = vec![1u8; n];
            BandScore {
                band: name.to_string(),
                max_bin,
                n,
                accuracy,
                macro_f1: macro_f1(&gold, &pred),
            }
        })
        .collect();
    Ok(QualityReport {
        bands,
        coverage: coverage(assignments, corpus).unwrap_or(0.0),
        iteration: assignments.iter().map(|a| a.iteration).max().unwrap_or(0),
    })
}
