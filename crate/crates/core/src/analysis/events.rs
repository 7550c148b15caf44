use std::collections::{BTreeMap, BTreeSet};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::assignment::Assignment;
use crate::corpus::Corpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weight {
    #[default]
    Count,
    Impressions,
}

impl std::str::FromStr for Weight {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "count" => Ok(Weight::Count),
            "impressions" => Ok(Weight::Impressions),
            other => Err(format!("unknown weight '{other}' (expected count or impressions)")),
        }
    }
}

/// `before = [event - before, event)`, `after = [event, event + after)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventWindows {
    pub event: NaiveDate,
    pub before: Duration,
    pub after: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPoint {
    pub talking_point_id: String,
    pub score: f64,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventShift {
    pub event: NaiveDate,
    pub weight: Weight,
    pub before: Vec<ScoredPoint>,
    pub after: Vec<ScoredPoint>,
    pub entered: Vec<String>,
    pub exited: Vec<String>,
    pub persisted: Vec<String>,
    /// Assigned instances skipped for lacking a date.
    pub undated: usize,
}

fn top_k(scores: BTreeMap<&str, (f64, usize)>, k: usize) -> Vec<ScoredPoint> {
    let mut list: Vec<ScoredPoint> = scores
        .into_iter()
        .map(|(id, (score, instances))| ScoredPoint {
            talking_point_id: id.to_string(),
            score,
            instances,
        })
        .collect();
    // BTreeMap order is by id, and the sort is stable
    list.sort_by(|a, b| b.score.total_cmp(&a.score));
    list.truncate(k);
    list
}

/// Top-`k` talking points by weighted usage in the windows before and after
/// an event.
pub fn event_shift(
    assignments: &[Assignment],
    corpus: &Corpus,
    windows: EventWindows,
    k: usize,
    weight: Weight,
) -> Result<EventShift, AnalysisError> {
    if windows.before <= Duration::zero() || windows.after <= Duration::zero() {
        return Err(AnalysisError::InvalidWindow);
    }
    let start = windows.event - windows.before;
    let end = windows.event + windows.after;
    let mut before: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    let mut after: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    let mut undated = 0;
    for a in assignments {
        let Some(inst) = corpus.get(&a.instance_id) else {
            continue;
        };
        let Some(date) = inst.date else {
            undated += 1;
            continue;
        };
        let side = if (start..windows.event).contains(&date) {
            &mut before
        } else if (windows.event..end).contains(&date) {
            &mut after
        } else {
            continue;
        };
        let w = match weight {
            Weight::Count => 1.0,
            Weight::Impressions => inst.impressions.unwrap_or(0) as f64,
        };
        let entry = side.entry(a.talking_point_id.as_str()).or_default();
        entry.0 += w;
        entry.1 += 1;
    }
    if undated > 0 {
        tracing::warn!(undated, "assigned instances without a date were skipped");
    }
    if before.is_empty() {
        tracing::warn!("no assigned instances in the window before the event");
    }
    if after.is_empty() {
        tracing::warn!("no assigned instances in the window after the event");
    }
    let before = top_k(before, k);
    let after = top_k(after, k);
    let b: BTreeSet<&str> = before.iter().map(|p| p.talking_point_id.as_str()).collect();
    let a: BTreeSet<&str> = after.iter().map(|p| p.talking_point_id.as_str()).collect();
    let owned = |s: BTreeSet<&&str>| s.into_iter().map(|x| x.to_string()).collect::<Vec<_>>();
    Ok(EventShift {
        event: windows.event,
        weight,
        entered: owned(a.difference(&b).collect()),
        exited: owned(b.difference(&a).collect()),
        persisted: owned(a.intersection(&b).collect()),
        before,
        after,
        undated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Instance, ThemeRegistry};

    fn day(d: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 8, d).unwrap()
    }

    fn fixture(rows: &[(&str, u32, u64)]) -> (Corpus, Vec<Assignment>) {
        let mut instances = Vec::new();
        let mut assignments = Vec::new();
        for (n, (tp, d, imp)) in rows.iter().enumerate() {
            let mut i = Instance::new(format!("i{n}"), "T", "x");
            i.date = Some(day(*d));
            i.impressions = Some(*imp);
            assignments.push(Assignment {
                instance_id: i.id.clone(),
                talking_point_id: tp.to_string(),
                distance: 0.1,
                iteration: 1,
                flagged: false,
            });
            instances.push(i);
        }
        (
            Corpus::new(instances, ThemeRegistry::new(["T"]).unwrap()).unwrap(),
            assignments,
        )
    }

    fn windows() -> EventWindows {
        EventWindows {
            event: day(15),
            before: Duration::days(10),
            after: Duration::days(10),
        }
    }

    #[test]
    fn everything_before() {
        let (c, a) = fixture(&[("A", 10, 1), ("B", 14, 1)]);
        let s = event_shift(&a, &c, windows(), 4, Weight::Count).unwrap();
        assert!(s.after.is_empty());
        assert_eq!(s.exited, ["A", "B"]);
    }

    #[test]
    fn window_edges() {
        // day 5 is the first day before, day 25 is outside after
        let (c, a) = fixture(&[("A", 5, 1), ("B", 4, 1), ("C", 15, 1), ("D", 25, 1)]);
        let s = event_shift(&a, &c, windows(), 4, Weight::Count).unwrap();
        let ids = |v: &[ScoredPoint]| v.iter().map(|p| p.talking_point_id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&s.before), ["A"]);
        assert_eq!(ids(&s.after), ["C"]);
    }

    #[test]
    fn rejects_empty_windows() {
        let (c, a) = fixture(&[]);
        let w = EventWindows {
            before: Duration::zero(),
            ..windows()
        };
        assert_eq!(
            event_shift(&a, &c, w, 4, Weight::Count),
            Err(AnalysisError::InvalidWindow)
        );
    }
}
