use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::argumentation::{extract_entities, LlmRunner};
use crate::assignment::Assignment;
use crate::corpus::{AgeBucket, Corpus, Instance};

/// Two-letter codes of the 50 states plus DC.
pub const US_STATES: [&str; 51] = [
    "AK", "AL", "AR", "AZ", "CA", "CO", "CT", "DC", "DE", "FL", "GA", "HI", "IA", "ID", "IL", "IN", "KS", "KY", "LA",
    "MA", "MD", "ME", "MI", "MN", "MO", "MS", "MT", "NC", "ND", "NE", "NH", "NJ", "NM", "NV", "NY", "OH", "OK", "OR",
    "PA", "RI", "SC", "SD", "TN", "TX", "UT", "VA", "VT", "WA", "WI", "WV", "WY",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeGroup {
    #[serde(rename = "13-24")]
    Young,
    #[serde(rename = "25-54")]
    WorkingAge,
    #[serde(rename = "55+")]
    Older,
}

impl AgeGroup {
    pub const ALL: [AgeGroup; 3] = [AgeGroup::Young, AgeGroup::WorkingAge, AgeGroup::Older];

    pub fn buckets(self) -> &'static [AgeBucket] {
        use AgeBucket::*;
        match self {
            AgeGroup::Young => &[A13To17, A18To24],
            AgeGroup::WorkingAge => &[A25To34, A35To44, A45To54],
            AgeGroup::Older => &[A55To64, A65Plus],
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AgeGroup::Young => "13-24",
            AgeGroup::WorkingAge => "25-54",
            AgeGroup::Older => "55+",
        }
    }
}

impl std::str::FromStr for AgeGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgeGroup::ALL
            .into_iter()
            .find(|g| g.label() == s)
            .ok_or_else(|| format!("unknown age group '{s}' (expected 13-24, 25-54 or 55+)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceMode {
    /// Age-group share and state share both at least `min_share`.
    #[default]
    ShareThreshold,
    /// The age group and the state are the instance's largest shares.
    Argmax,
}

impl std::str::FromStr for SliceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "share_threshold" | "threshold" => Ok(SliceMode::ShareThreshold),
            "argmax" => Ok(SliceMode::Argmax),
            other => Err(format!("unknown slice mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub age_group: AgeGroup,
    pub state: String,
    pub min_share: f64,
    pub mode: SliceMode,
}

impl SliceSpec {
    pub fn new(age_group: AgeGroup, state: impl Into<String>) -> Self {
        SliceSpec {
            age_group,
            state: state.into(),
            min_share: 0.5,
            mode: SliceMode::ShareThreshold,
        }
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        if !US_STATES.contains(&self.state.as_str()) {
            return Err(AnalysisError::UnknownState(self.state.clone()));
        }
        if !(0.0..=1.0).contains(&self.min_share) {
            return Err(AnalysisError::InvalidShare(self.min_share));
        }
        Ok(())
    }

    pub fn admits(&self, inst: &Instance) -> bool {
        match self.mode {
            SliceMode::ShareThreshold => {
                inst.age_share(self.age_group.buckets()) >= self.min_share
                    && inst.region_share(&self.state) >= self.min_share
            }
            SliceMode::Argmax => {
                let top_group = AgeGroup::ALL
                    .into_iter()
                    .map(|g| (g, inst.age_share(g.buckets())))
                    .fold(None::<(AgeGroup, f64)>, |best, (g, s)| match best {
                        Some((_, bs)) if bs >= s => best,
                        _ => Some((g, s)),
                    });
                let top_state = inst
                    .region_shares
                    .iter()
                    .fold(None::<(&String, f64)>, |best, (st, s)| match best {
                        Some((_, bs)) if bs >= *s => best,
                        _ => Some((st, *s)),
                    });
                matches!(top_group, Some((g, s)) if g == self.age_group && s > 0.0)
                    && matches!(top_state, Some((st, s)) if *st == self.state && s > 0.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub spec: SliceSpec,
    pub instance_ids: Vec<String>,
    /// (talking point id, assigned instances in the slice), most used first.
    pub top_talking_points: Vec<(String, usize)>,
    pub entities: Vec<String>,
}

/// Instances targeted at an age group in a state, the talking points they
/// were assigned to, and (with a runner) the entities they mention most.
pub fn demographic_slice(
    corpus: &Corpus,
    assignments: &[Assignment],
    spec: &SliceSpec,
    top_k_entities: usize,
    runner: Option<&LlmRunner>,
) -> Result<SliceReport, AnalysisError> {
    spec.validate()?;
    let members: Vec<&Instance> = corpus.instances().iter().filter(|i| spec.admits(i)).collect();
    if members.is_empty() {
        tracing::warn!(age_group = spec.age_group.label(), state = %spec.state, "slice is empty");
    }
    let ids: std::collections::BTreeSet<&str> = members.iter().map(|i| i.id.as_str()).collect();
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in assignments.iter().filter(|a| ids.contains(a.instance_id.as_str())) {
        *counts.entry(a.talking_point_id.as_str()).or_default() += 1;
    }
    let mut top: Vec<(String, usize)> = counts.into_iter().map(|(t, c)| (t.to_string(), c)).collect();
    top.sort_by_key(|e| std::cmp::Reverse(e.1));

    let entities = match runner {
        Some(runner) if top_k_entities > 0 && !members.is_empty() => {
            let texts: Vec<String> = members.iter().map(|i| i.text.clone()).collect();
            let label = format!("{} {}", spec.age_group.label(), spec.state);
            extract_entities(&label, &texts, top_k_entities, runner)?.0
        }
        _ => Vec::new(),
    };
    Ok(SliceReport {
        spec: spec.clone(),
        instance_ids: members.iter().map(|i| i.id.clone()).collect(),
        top_talking_points: top,
        entities,
    })
}
