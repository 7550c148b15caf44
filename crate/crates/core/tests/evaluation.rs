mod common;

use std::collections::BTreeMap;

use argloop_core::assignment::Assignment;
use argloop_core::config::Config;
use argloop_core::corpus::{Corpus, Instance, ThemeRegistry};
use argloop_core::evaluation::{
    effective_labels, labeled_samples, read_labels_csv, sample_for_review, score_report, write_samples_csv, EvalError,
    ReviewSample,
};
use argloop_core::review::{self, StatusFilter, CONTEXT_INSTANCES};
use common::*;

fn sample(bin: u8, label: Option<u8>) -> ReviewSample {
    ReviewSample {
        instance_id: format!("i{bin}{}", label.unwrap_or(9)),
        talking_point_id: "t".into(),
        theme: "T".into(),
        distance: 0.1 * f64::from(bin),
        quartile_bin: bin,
        human_label: label,
    }
}

fn tiny_corpus() -> Corpus {
    Corpus::new(vec![Instance::new("a", "T", "x")], ThemeRegistry::new(["T"]).unwrap()).unwrap()
}

#[test]
fn banded_accuracy_by_hand() {
    let samples: Vec<ReviewSample> = [1, 1, 0, 1]
        .into_iter()
        .enumerate()
        .map(|(n, l)| ReviewSample {
            instance_id: format!("q1-{n}"),
            ..sample(1, Some(l))
        })
        .chain([sample(3, Some(0)), sample(4, Some(0))])
        .collect();
    let r = score_report(&samples, &[], &tiny_corpus()).unwrap();
    let acc: Vec<f64> = r.bands.iter().map(|b| b.accuracy).collect();
    assert_eq!(acc, [0.75, 0.75, 0.6, 0.5]);
    let n: Vec<usize> = r.bands.iter().map(|b| b.n).collect();
    assert_eq!(n, [4, 4, 5, 6]);
    // gold {1,1,0,1} against all-ones: F1(1) = 6/7, F1(0) = 0
    assert!((r.bands[0].macro_f1 - 3.0 / 7.0).abs() < 1e-12);
    let json = serde_json::to_string(&r).unwrap();
    assert_eq!(
        serde_json::from_str::<argloop_core::evaluation::QualityReport>(&json).unwrap(),
        r
    );
}

#[test]
fn unlabeled_sample_is_an_error() {
    let err = score_report(&[sample(1, None)], &[], &tiny_corpus()).unwrap_err();
    assert!(matches!(err, EvalError::UnlabeledSample { .. }));
}

#[test]
fn small_bins_are_not_padded() {
    let tps = [tp("t", "T", vec![1.0])];
    // 6 assignments: quartile bins get 2, 1, 1, 2 members
    let assignments: Vec<Assignment> = (0..6)
        .map(|i| Assignment {
            instance_id: format!("i{i}"),
            talking_point_id: "t".into(),
            distance: 0.05 * f64::from(i),
            iteration: 1,
            flagged: false,
        })
        .collect();
    let s = sample_for_review(&assignments, &tps, 3, 0).unwrap();
    let mut per_bin = BTreeMap::new();
    for x in &s {
        *per_bin.entry(x.quartile_bin).or_insert(0) += 1;
    }
    assert_eq!(s.len(), 6);
    assert!(per_bin.values().all(|n| *n <= 3));
}

#[test]
fn sample_label_score_over_a_pipeline_run() {
    let corpus = synthetic();
    let state = run_states(&corpus, Config::default(), 2).pop().unwrap();
    let samples = sample_for_review(&state.assignments, &state.talking_points, 3, 21).unwrap();
    assert_eq!(samples.len(), 12 * corpus.registry().len());

    let mut csv = Vec::new();
    write_samples_csv(&samples, Some(&corpus), &state.talking_points, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), samples.len() + 1);

    // annotate: mappings in the closest two quartiles are right, others wrong
    let mut labels = String::from("instance_id,talking_point_id,label\n");
    for s in &samples {
        labels.push_str(&format!(
            "{},{},{}\n",
            s.instance_id,
            s.talking_point_id,
            u8::from(s.quartile_bin <= 2)
        ));
    }
    labels.push_str("ghost,tp-9-00-00,1\n");
    let rows = read_labels_csv(labels.as_bytes()).unwrap();
    let log: Vec<_> = rows
        .into_iter()
        .map(|(i, t, label)| argloop_core::evaluation::LabelRecord {
            instance_id: i,
            talking_point_id: t,
            label,
            source: "test".into(),
            recorded_at: chrono::Utc::now(),
        })
        .collect();
    let (labeled, stray) = labeled_samples(&state.assignments, &state.talking_points, &effective_labels(&log)).unwrap();
    assert_eq!(stray, [("ghost".to_string(), "tp-9-00-00".to_string())]);
    assert_eq!(labeled.len(), samples.len());

    let report = score_report(&labeled, &state.assignments, &corpus).unwrap();
    let acc: Vec<f64> = report.bands.iter().map(|b| b.accuracy).collect();
    assert_eq!(acc[..2], [1.0, 1.0]);
    assert!(acc.windows(2).all(|w| w[0] >= w[1]), "{acc:?}");
    assert_eq!(report.coverage, state.coverage(&corpus));
    assert_eq!(report.iteration, 2);
}

#[test]
fn review_listing_over_a_pipeline_run() {
    let corpus = synthetic();
    let state = run_states(&corpus, Config::default(), 2).pop().unwrap();
    let pending = review::list_talking_points(&state, Some(&corpus), StatusFilter::Pending);
    assert_eq!(pending.len(), state.active_talking_points().count());
    for item in &pending {
        let used = state
            .assignments
            .iter()
            .filter(|a| a.talking_point_id == item.id)
            .count();
        assert_eq!(item.nearest_instances.len(), used.min(CONTEXT_INSTANCES));
        for ctx in &item.nearest_instances {
            assert_eq!(ctx.text, corpus.get(&ctx.instance_id).unwrap().text);
        }
    }
    let merges = review::list_merges(&state, StatusFilter::Pending);
    assert_eq!(merges.len(), state.merge_groups.len());
    let p = review::progress(&state);
    assert_eq!(p.talking_points.pending, pending.len());
    assert_eq!(p.merges.pending, merges.len());
}
