mod common;

use std::collections::BTreeSet;

use argloop_core::analysis::{
    correlation_matrix, demographic_slice, event_shift, export_stance_dataset, AgeGroup, AnalysisError, EventWindows,
    SliceMode, SliceSpec, SplitFractions, Weight,
};
use argloop_core::argumentation::{LlmRunner, MockLlm};
use argloop_core::assignment::Assignment;
use argloop_core::corpus::{AgeBucket, Corpus, Gender, Instance, ThemeRegistry};
use chrono::{Duration, NaiveDate};
use common::{pearson_oracle, tp};

fn assign(instance: &str, tp: &str) -> Assignment {
    Assignment {
        instance_id: instance.into(),
        talking_point_id: tp.into(),
        distance: 0.2,
        iteration: 1,
        flagged: false,
    }
}

fn corpus(instances: Vec<Instance>) -> Corpus {
    Corpus::new(instances, ThemeRegistry::new(["T"]).unwrap()).unwrap()
}

fn day(d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(2021, 8, d).unwrap()
}

/// One dated instance per (talking point, day, impressions) row.
fn dated(rows: &[(&str, u32, u64)]) -> (Corpus, Vec<Assignment>) {
    let mut instances = Vec::new();
    let mut assignments = Vec::new();
    for (n, (t, d, imp)) in rows.iter().enumerate() {
        let mut i = Instance::new(format!("i{n:02}"), "T", "text");
        i.date = Some(day(*d));
        i.impressions = Some(*imp);
        assignments.push(assign(&i.id, t));
        instances.push(i);
    }
    (corpus(instances), assignments)
}

fn windows() -> EventWindows {
    EventWindows {
        event: day(15),
        before: Duration::days(10),
        after: Duration::days(10),
    }
}

fn ids(points: &[argloop_core::analysis::ScoredPoint]) -> Vec<&str> {
    points.iter().map(|p| p.talking_point_id.as_str()).collect()
}

#[test]
fn event_shift_counted_example() {
    let mut rows = Vec::new();
    for (t, before, after) in [("A", 5, 1), ("B", 3, 3), ("C", 1, 4)] {
        rows.extend(std::iter::repeat_n((t, 10, 1), before));
        rows.extend(std::iter::repeat_n((t, 20, 1), after));
    }
    let (c, a) = dated(&rows);
    let s = event_shift(&a, &c, windows(), 2, Weight::Count).unwrap();
    assert_eq!(ids(&s.before), ["A", "B"]);
    assert_eq!(ids(&s.after), ["C", "B"]);
    assert_eq!(s.entered, ["C"]);
    assert_eq!(s.exited, ["A"]);
    assert_eq!(s.persisted, ["B"]);
    assert_eq!(s.before[0].score, 5.0);
}

#[test]
fn impressions_flip_the_ranking() {
    // equal counts, A wins the id tie-break; B has more impressions
    let (c, a) = dated(&[("A", 10, 10), ("A", 11, 20), ("B", 12, 100), ("B", 13, 5)]);
    let by_count = event_shift(&a, &c, windows(), 2, Weight::Count).unwrap();
    assert_eq!(ids(&by_count.before), ["A", "B"]);
    let by_reach = event_shift(&a, &c, windows(), 2, Weight::Impressions).unwrap();
    assert_eq!(ids(&by_reach.before), ["B", "A"]);
    assert_eq!(by_reach.before[0].score, 105.0);
    assert_eq!(by_reach.before[1].score, 30.0);
}

#[test]
fn uniform_impressions_match_counts() {
    let (c, a) = dated(&[("A", 10, 7), ("B", 11, 7), ("B", 16, 7), ("C", 18, 7), ("C", 19, 7)]);
    let count = event_shift(&a, &c, windows(), 3, Weight::Count).unwrap();
    let reach = event_shift(&a, &c, windows(), 3, Weight::Impressions).unwrap();
    assert_eq!(ids(&count.before), ids(&reach.before));
    assert_eq!(ids(&count.after), ids(&reach.after));
    for (x, y) in count.after.iter().zip(&reach.after) {
        assert_eq!(x.score * 7.0, y.score);
    }
}

#[test]
fn undated_instances_are_counted_and_skipped() {
    let (c, mut a) = dated(&[("A", 10, 1)]);
    let mut instances = c.instances().to_vec();
    instances.push(Instance::new("u", "T", "no date"));
    let c = corpus(instances);
    a.push(assign("u", "A"));
    let s = event_shift(&a, &c, windows(), 4, Weight::Count).unwrap();
    assert_eq!(s.undated, 1);
    assert_eq!(s.before[0].instances, 1);
}

fn stance_fixture(pro: usize, clean: usize, unassigned: usize) -> (Corpus, Vec<Assignment>) {
    let mut instances = Vec::new();
    let mut assignments = Vec::new();
    for n in 0..pro + clean + unassigned {
        let mut i = Instance::new(format!("s{n:02}"), "T", format!("ad number {n}"));
        i.aux_label = Some(
            if n < pro || n >= pro + clean {
                "pro-energy"
            } else {
                "clean-energy"
            }
            .into(),
        );
        if n < pro + clean {
            assignments.push(assign(&i.id, if n % 2 == 0 { "p" } else { "q" }));
        }
        instances.push(i);
    }
    (corpus(instances), assignments)
}

#[test]
fn stance_split_sizes() {
    let (c, a) = stance_fixture(5, 5, 3);
    let tps = [tp("p", "T", vec![1.0, 0.0]), tp("q", "T", vec![0.0, 1.0])];
    let s = export_stance_dataset(&a, &c, &tps, None, SplitFractions::default(), 4).unwrap();
    assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (6, 2, 2));
    assert_eq!(s.unassigned_excluded, 3);
    let all: BTreeSet<&str> = s
        .train
        .iter()
        .chain(&s.validation)
        .chain(&s.test)
        .map(|r| r.instance_id.as_str())
        .collect();
    assert_eq!(all.len(), 10);
    let r = &s.train[0];
    let expected_tp = if r.instance_id[1..].parse::<usize>().unwrap() % 2 == 0 {
        "point p"
    } else {
        "point q"
    };
    assert_eq!(r.talking_point, expected_tp);
    assert_eq!(r.text, c.get(&r.instance_id).unwrap().text);
}

#[test]
fn stance_split_is_stratified() {
    let (c, a) = stance_fixture(14, 6, 0);
    let tps = [tp("p", "T", vec![1.0, 0.0]), tp("q", "T", vec![0.0, 1.0])];
    for seed in 0..25 {
        let s = export_stance_dataset(&a, &c, &tps, None, SplitFractions::default(), seed).unwrap();
        for split in [&s.train, &s.validation, &s.test] {
            let pro = split.iter().filter(|r| r.stance == "pro-energy").count() as f64;
            let expected = split.len() as f64 * 0.7;
            assert!(
                (pro - expected).abs() <= 1.0,
                "seed {seed}: {pro} pro of {}",
                split.len()
            );
        }
        let again = export_stance_dataset(&a, &c, &tps, None, SplitFractions::default(), seed).unwrap();
        assert_eq!(again, s);
    }
}

#[test]
fn stance_errors() {
    let (c, a) = stance_fixture(3, 3, 0);
    let only_other = ["neutral".to_string()];
    assert_eq!(
        export_stance_dataset(&a, &c, &[], Some(&only_other), SplitFractions::default(), 0),
        Err(AnalysisError::NoStanceLabels)
    );
    let bad = SplitFractions {
        train: 0.9,
        validation: 0.2,
        test: 0.2,
    };
    assert_eq!(
        export_stance_dataset(&a, &c, &[], None, bad, 0),
        Err(AnalysisError::InvalidSplit)
    );
}

#[test]
fn correlation_matches_oracle() {
    let labels = ["x", "y", "x", "x", "y", "y", "x", "y"];
    let tps = ["a", "a", "b", "a", "b", "c", "c", "b"];
    let instances = labels
        .iter()
        .enumerate()
        .map(|(n, l)| {
            let mut i = Instance::new(format!("i{n}"), "T", "t");
            i.aux_label = Some(l.to_string());
            i
        })
        .collect();
    let c = corpus(instances);
    let a: Vec<Assignment> = tps
        .iter()
        .enumerate()
        .map(|(n, t)| assign(&format!("i{n}"), t))
        .collect();
    let m = correlation_matrix(&a, &c).unwrap();
    assert_eq!(m.rows, ["a", "b", "c"]);
    assert_eq!(m.columns, ["x", "y"]);
    assert_eq!(m.n, 8);
    for (ri, t) in m.rows.iter().enumerate() {
        for (ci, l) in m.columns.iter().enumerate() {
            let xs: Vec<f64> = tps.iter().map(|v| f64::from(u8::from(v == t))).collect();
            let ys: Vec<f64> = labels.iter().map(|v| f64::from(u8::from(v == l))).collect();
            let expected = pearson_oracle(&xs, &ys).unwrap();
            assert!((m.r[ri][ci] - expected).abs() < 1e-12);
        }
    }
    let mut long = Vec::new();
    m.write_long_csv(&mut long).unwrap();
    let text = String::from_utf8(long).unwrap();
    assert_eq!(text.lines().count(), 1 + 6);
    assert!(text.starts_with("tp_id,label,r,n\n"));
}

#[test]
fn correlation_constant_column_is_zero() {
    let mut i0 = Instance::new("i0", "T", "t");
    i0.aux_label = Some("x".into());
    let mut i1 = Instance::new("i1", "T", "t");
    i1.aux_label = Some("x".into());
    let m = correlation_matrix(&[assign("i0", "a"), assign("i1", "b")], &corpus(vec![i0, i1])).unwrap();
    assert_eq!(m.r, [[0.0], [0.0]]);
    assert_eq!(m.constant_cells, 2);
    assert_eq!(
        correlation_matrix(&[], &corpus(vec![])),
        Err(AnalysisError::NoLabeledInstances)
    );
}

fn targeted(id: &str, bucket: AgeBucket, share: f64, state: &str, text: &str) -> Instance {
    let mut i = Instance::new(id, "T", text);
    i.demo_shares
        .entry(Gender::Male)
        .or_default()
        .insert(bucket, share / 2.0);
    i.demo_shares
        .entry(Gender::Female)
        .or_default()
        .insert(bucket, share / 2.0);
    i.region_shares.insert(state.into(), 0.7);
    i
}

#[test]
fn demographic_slice_with_entities() {
    let c = corpus(vec![
        targeted(
            "a",
            AgeBucket::A65Plus,
            0.8,
            "FL",
            "Ron DeSantis protects Florida seniors.",
        ),
        targeted(
            "b",
            AgeBucket::A55To64,
            0.9,
            "FL",
            "Ron DeSantis cuts taxes for retirees.",
        ),
        targeted("c", AgeBucket::A18To24, 0.9, "FL", "Students deserve clean energy."),
    ]);
    let a = vec![assign("a", "t"), assign("b", "t"), assign("c", "u")];
    let runner = LlmRunner::new(std::sync::Arc::new(MockLlm::new()));
    let spec = SliceSpec::new(AgeGroup::Older, "FL");
    let r = demographic_slice(&c, &a, &spec, 3, Some(&runner)).unwrap();
    assert_eq!(r.instance_ids, ["a", "b"]);
    assert_eq!(r.top_talking_points, [("t".to_string(), 2)]);
    assert!(r.entities.len() <= 3);
    assert_eq!(r.entities.first().map(String::as_str), Some("Ron DeSantis"));

    let argmax = SliceSpec {
        mode: SliceMode::Argmax,
        ..spec.clone()
    };
    assert_eq!(
        demographic_slice(&c, &a, &argmax, 0, None).unwrap().instance_ids,
        ["a", "b"]
    );
    let empty = demographic_slice(&c, &a, &SliceSpec::new(AgeGroup::Older, "TX"), 3, Some(&runner)).unwrap();
    assert!(empty.instance_ids.is_empty() && empty.entities.is_empty());
}
