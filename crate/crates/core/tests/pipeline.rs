mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use argloop_core::argumentation::{GenerationParams, LlmClient, LlmError, LlmRunner, MockLlm, Prompt};
use argloop_core::config::Config;
use argloop_core::corpus::synthetic::{generate, SyntheticSpec};
use argloop_core::pipeline::{self, checkpoint_path, Checkpoint, Engine, PipelineError};
use argloop_core::retry::RetryPolicy;
use argloop_core::state::RunState;
use argloop_core::vectorspace::{EmbedError, EmbeddingProvider};
use common::*;

/// Mock completions, failing fatally once `fail_after` calls succeeded.
struct Flaky {
    inner: MockLlm,
    calls: AtomicUsize,
    fail_after: usize,
}

impl Flaky {
    fn new(fail_after: usize) -> Arc<Self> {
        Arc::new(Flaky {
            inner: MockLlm::new(),
            calls: AtomicUsize::new(0),
            fail_after,
        })
    }
}

impl LlmClient for Flaky {
    fn name(&self) -> &str {
        "flaky"
    }

    fn model(&self) -> &str {
        "mock-deterministic"
    }

    fn complete(&self, prompt: &Prompt, params: &GenerationParams) -> Result<String, LlmError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n >= self.fail_after {
            return Err(LlmError::Rejected("quota exhausted".into()));
        }
        self.inner.complete(prompt, params)
    }
}

fn runner(client: Arc<dyn LlmClient>) -> LlmRunner {
    LlmRunner::new(client).with_retry(RetryPolicy::immediate(0))
}

#[test]
fn interrupted_iteration_resumes_from_checkpoint() {
    let corpus = synthetic();
    let config = Config::default();
    let dir = tempfile::tempdir().unwrap();
    let state_path = dir.path().join("state.json");
    let ckpt = checkpoint_path(&state_path);
    let start = RunState::new(config.clone(), &corpus, None);

    let counting = Flaky::new(usize::MAX);
    let reference = Engine::new(&corpus, config.build_embedder(), runner(counting.clone()))
        .run_iteration(&start)
        .unwrap();
    let total_calls = counting.calls.load(Ordering::SeqCst);
    assert!(total_calls > 10);

    let flaky = Flaky::new(7);
    let err = Engine::new(&corpus, config.build_embedder(), runner(flaky))
        .with_checkpoint(ckpt.clone())
        .run_iteration(&start)
        .unwrap_err();
    assert!(matches!(err, PipelineError::Argument { .. }), "{err}");
    let saved: Checkpoint = serde_json::from_str(&std::fs::read_to_string(&ckpt).unwrap()).unwrap();
    assert_eq!(saved.iteration, 1);
    assert_eq!(saved.completions.len(), 7);

    let resumed_client = Flaky::new(usize::MAX);
    let engine =
        Engine::new(&corpus, config.build_embedder(), runner(resumed_client.clone())).with_checkpoint(ckpt.clone());
    let resumed = engine.run_iteration(&start).unwrap();
    assert_eq!(resumed_client.calls.load(Ordering::SeqCst), total_calls - 7);
    assert_eq!(resumed.normalized().to_json(), reference.normalized().to_json());

    engine.clear_checkpoint();
    assert!(!ckpt.exists());
}

#[test]
fn checkpoint_from_another_base_is_ignored() {
    let corpus = synthetic();
    let config = Config::default();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("s.checkpoint");
    let poisoned = Checkpoint {
        iteration: 1,
        base_digest: "not-this-state".into(),
        stage: None,
        completions: [("x".to_string(), "y".to_string())].into(),
    };
    std::fs::write(&ckpt, serde_json::to_string(&poisoned).unwrap()).unwrap();
    let start = RunState::new(config.clone(), &corpus, None);
    let client = Flaky::new(usize::MAX);
    Engine::new(&corpus, config.build_embedder(), runner(client.clone()))
        .with_checkpoint(ckpt)
        .run_iteration(&start)
        .unwrap();
    let plain = Flaky::new(usize::MAX);
    Engine::new(&corpus, config.build_embedder(), runner(plain.clone()))
        .run_iteration(&start)
        .unwrap();
    assert_eq!(client.calls.load(Ordering::SeqCst), plain.calls.load(Ordering::SeqCst));
}

struct Down;

impl EmbeddingProvider for Down {
    fn name(&self) -> &str {
        "down"
    }

    fn dimension(&self) -> usize {
        8
    }

    fn embed_batch(&self, _: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Err(EmbedError::ProviderUnavailable("connection refused".into()))
    }
}

#[test]
fn embedding_failure_aborts_without_changes() {
    let corpus = synthetic();
    let config = Config::default();
    let mut state = RunState::new(config.clone(), &corpus, None);
    let engine = Engine::new(&corpus, Arc::new(Down), config.build_llm().unwrap());
    let before = state.clone();
    let err = pipeline::run(&engine, &mut state, 2, None, None).unwrap_err();
    assert!(matches!(err, PipelineError::Embed(_)), "{err}");
    assert_eq!(state, before);
}

#[test]
fn run_saves_each_iteration_and_stops_at_target() {
    let corpus = synthetic();
    let config = Config::default();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    let engine = engine(&corpus, &config);
    let mut state = RunState::new(config, &corpus, None);
    let summary = pipeline::run(&engine, &mut state, 10, Some(0.55), Some(&path)).unwrap();
    assert_eq!(summary.iterations_run, 2);
    assert!(summary.coverage >= 0.55);
    let saved = RunState::load(&path).unwrap();
    assert_eq!(saved.iterations.len(), 2);
    assert_eq!(saved.normalized(), state.normalized());
}

#[test]
fn iterations_never_reassign() {
    let corpus = synthetic();
    let states = run_states(&corpus, Config::default(), 3);
    let last = &states[3];
    let mut seen = std::collections::BTreeSet::new();
    for a in &last.assignments {
        assert!(seen.insert(a.instance_id.clone()), "{} assigned twice", a.instance_id);
        let tp = last.talking_point(&a.talking_point_id).unwrap();
        let inst = corpus.get(&a.instance_id).unwrap();
        assert_eq!(tp.theme, inst.theme);
        assert!(a.distance < last.config.assign_threshold);
    }
    // every earlier assignment survives unchanged
    for (earlier, later) in states.windows(2).map(|w| (&w[0], &w[1])) {
        assert!(later.assignments.starts_with(&earlier.assignments));
    }
    let coverages: Vec<f64> = states.iter().map(|s| s.coverage(&corpus)).collect();
    assert!(coverages.windows(2).all(|w| w[0] <= w[1]), "{coverages:?}");
}

#[test]
fn small_themes_get_a_single_subcluster() {
    let (corpus, _) = generate(&SyntheticSpec {
        themes: 2,
        per_theme: 6,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let states = run_states(&corpus, Config::default(), 1);
    let rec = &states[1].iterations[0];
    for report in rec.k_selection.values() {
        assert_eq!(report.chosen_k, 1);
        assert!(report.candidate_ks.is_empty());
    }
    assert_eq!(rec.subclusters.len(), 2);
}

#[test]
fn ablation_skips_summaries() {
    let corpus = synthetic();
    let states = run_states(
        &corpus,
        Config {
            ablation_no_summary: true,
            ..Config::default()
        },
        1,
    );
    let s = &states[1];
    assert!(s.iterations[0].ablation_no_summary);
    assert!(s.iterations[0].subclusters.iter().all(|sc| sc.summary.is_none()));
    assert!(s.llm_call_log.iter().all(|c| c.template_id != "summary.v1"));
    assert!(!s.talking_points.is_empty());
}
