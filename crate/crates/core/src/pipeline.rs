//! One iteration: cluster the unassigned instances per theme, summarize the
//! sub-clusters, generate and embed talking points, merge redundant ones and
//! assign the still-unassigned instances.
//!
//! LLM completions made during an iteration are checkpointed next to the
//! state file after every stage. A failed iteration leaves the state file
//! untouched; rerunning it replays the checkpointed completions instead of
//! calling the model again.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::argumentation::{
    generate_talking_point, render_summary_prompt, render_tp_prompt, summarize_subcluster, ArgumentError, CallRecord,
    GenerationParams, LlmClient, LlmError, LlmRunner, Prompt,
};
use crate::assignment::{assign, threshold_sweep, AssignError, SweepPoint};
use crate::clustering::{kmeans_with, nearest_to_centroid, select_and_cluster, ClusterError, KSelectionReport};
use crate::consolidation::{similarity_groups_with, GroupingOptions, MergeError, MergeScope, TalkingPoint, TpStatus};
use crate::corpus::{partition_by_theme, Corpus, Instance};
use crate::par::bounded_map;
use crate::review;
use crate::state::{write_atomic, IterationRecord, RunState, StateError, SubCluster};
use crate::vectorspace::{embed, EmbedError, Embedding, EmbeddingProvider};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("embedding failed: {0}")]
    Embed(#[from] EmbedError),
    #[error("clustering theme '{theme}' failed: {source}")]
    Cluster {
        theme: String,
        #[source]
        source: ClusterError,
    },
    #[error("sub-cluster {subcluster}: {source}")]
    Argument {
        subcluster: String,
        #[source]
        source: ArgumentError,
    },
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Assign(#[from] AssignError),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Embedded,
    Clustered,
    Summarized,
    Generated,
}

/// Completions gathered so far by an unfinished iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: u32,
    /// Digest of the state the iteration started from.
    pub base_digest: String,
    pub stage: Option<Stage>,
    pub completions: BTreeMap<String, String>,
}

pub fn checkpoint_path(state_path: &Path) -> PathBuf {
    let mut name = state_path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".checkpoint");
    state_path.with_file_name(name)
}

/// Serves completions recorded in a checkpoint, records fresh ones.
struct ReplayClient {
    inner: Arc<dyn LlmClient>,
    completions: Mutex<BTreeMap<String, String>>,
}

impl LlmClient for ReplayClient {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn model(&self) -> &str {
        self.inner.model()
    }

    fn complete(&self, prompt: &Prompt, params: &GenerationParams) -> Result<String, LlmError> {
        let digest = prompt.digest();
        if let Some(hit) = self.completions.lock().expect("completion cache poisoned").get(&digest) {
            return Ok(hit.clone());
        }
        let text = self.inner.complete(prompt, params)?;
        self.completions
            .lock()
            .expect("completion cache poisoned")
            .insert(digest, text.clone());
        Ok(text)
    }
}

pub struct Engine<'a> {
    corpus: &'a Corpus,
    embedder: Arc<dyn EmbeddingProvider>,
    runner: LlmRunner,
    checkpoint: Option<PathBuf>,
    workers: usize,
}

struct ThemeJob<'a> {
    theme: String,
    index: usize,
    members: Vec<&'a Instance>,
}

struct Generated {
    subcluster: usize,
    text: String,
    summary: Option<String>,
}

impl<'a> Engine<'a> {
    pub fn new(corpus: &'a Corpus, embedder: Arc<dyn EmbeddingProvider>, runner: LlmRunner) -> Self {
        Engine {
            corpus,
            embedder,
            runner,
            checkpoint: None,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }

    /// Enables stage checkpoints at `path`.
    pub fn with_checkpoint(mut self, path: PathBuf) -> Self {
        self.checkpoint = Some(path);
        self
    }

    pub fn corpus(&self) -> &Corpus {
        self.corpus
    }

    /// Embeddings of the given instances keyed by id.
    pub fn embed_instances(&self, instances: &[&Instance]) -> Result<BTreeMap<String, Embedding>, PipelineError> {
        let texts: Vec<String> = instances.iter().map(|i| i.text.clone()).collect();
        let vectors = embed(&texts, self.embedder.as_ref())?;
        Ok(instances.iter().map(|i| i.id.clone()).zip(vectors).collect())
    }

    /// Reassigns the whole corpus against the state's active talking points
    /// at each threshold. The state is not modified.
    pub fn sweep(&self, state: &RunState, thresholds: &[f64]) -> Result<Vec<SweepPoint>, PipelineError> {
        let all: Vec<&Instance> = self.corpus.instances().iter().collect();
        let embeddings = self.embed_instances(&all)?;
        Ok(threshold_sweep(
            self.corpus,
            &embeddings,
            &state.talking_points,
            thresholds,
        )?)
    }

    fn load_checkpoint(&self, iteration: u32, base_digest: &str) -> BTreeMap<String, String> {
        let Some(path) = &self.checkpoint else {
            return BTreeMap::new();
        };
        let Ok(text) = std::fs::read_to_string(path) else {
            return BTreeMap::new();
        };
        match serde_json::from_str::<Checkpoint>(&text) {
            Ok(cp) if cp.iteration == iteration && cp.base_digest == base_digest => {
                tracing::info!(
                    iteration,
                    stage = ?cp.stage,
                    completions = cp.completions.len(),
                    "resuming from checkpoint"
                );
                cp.completions
            }
            Ok(_) => {
                tracing::warn!(path = %path.display(), "ignoring checkpoint from a different run");
                BTreeMap::new()
            }
            Err(e) => {
                tracing::warn!(path = %path.display(), error = %e, "ignoring unreadable checkpoint");
                BTreeMap::new()
            }
        }
    }

    fn save_checkpoint(&self, iteration: u32, base_digest: &str, stage: Option<Stage>, client: &ReplayClient) {
        let Some(path) = &self.checkpoint else {
            return;
        };
        let cp = Checkpoint {
            iteration,
            base_digest: base_digest.to_string(),
            stage,
            completions: client.completions.lock().expect("completion cache poisoned").clone(),
        };
        let json = serde_json::to_string(&cp).expect("checkpoint serializes");
        if let Err(e) = write_atomic(path, json.as_bytes()) {
            tracing::warn!(error = %e, "could not write checkpoint");
        }
    }

    pub fn clear_checkpoint(&self) {
        if let Some(path) = &self.checkpoint {
            let _ = std::fs::remove_file(path);
        }
    }

    /// Runs one iteration over the currently unassigned instances and
    /// returns the updated state. `state` itself is left unchanged.
    pub fn run_iteration(&self, state: &RunState) -> Result<RunState, PipelineError> {
        state.check_corpus(self.corpus)?;
        let iteration = state.next_iteration();
        let base_digest = state.digest();
        let replay = Arc::new(ReplayClient {
            inner: Arc::clone(self.runner.client()),
            completions: Mutex::new(self.load_checkpoint(iteration, &base_digest)),
        });
        let runner = self.runner.with_client(replay.clone());
        let result = self.iterate(state, iteration, &runner, &|stage| {
            self.save_checkpoint(iteration, &base_digest, Some(stage), &replay)
        });
        if result.is_err() {
            self.save_checkpoint(iteration, &base_digest, None, &replay);
        }
        result
    }

    fn iterate(
        &self,
        state: &RunState,
        iteration: u32,
        runner: &LlmRunner,
        stage_done: &dyn Fn(Stage),
    ) -> Result<RunState, PipelineError> {
        let started_at = Utc::now();
        let clock = Instant::now();
        let config = &state.config;
        let mut next = state.clone();
        review::refresh(&mut next);

        let assigned: BTreeSet<String> = next.assigned_ids().into_iter().map(String::from).collect();
        let open: Vec<&Instance> = self
            .corpus
            .instances()
            .iter()
            .filter(|i| !assigned.contains(&i.id))
            .collect();
        let coverage_before = next.coverage(self.corpus);
        let mut record = IterationRecord {
            iteration,
            started_at,
            duration_ms: 0,
            ablation_no_summary: config.ablation_no_summary,
            unassigned_before: open.len(),
            coverage_before,
            coverage_after: coverage_before,
            new_talking_points: 0,
            merged_away: 0,
            active_talking_points: next.active_talking_points().count(),
            assignments_added: 0,
            k_selection: BTreeMap::new(),
            subclusters: Vec::new(),
            merge_groups: Vec::new(),
            unassigned: Vec::new(),
        };
        if open.is_empty() {
            tracing::info!(iteration, "every instance is already assigned");
            record.duration_ms = clock.elapsed().as_millis() as u64;
            next.iterations.push(record);
            next.touch();
            return Ok(next);
        }

        let embeddings = self.embed_instances(&open)?;
        stage_done(Stage::Embedded);

        // clustering
        let jobs: Vec<ThemeJob> = partition_by_theme(open.iter().copied())
            .into_iter()
            .map(|(theme, members)| ThemeJob {
                index: self.corpus.registry().index_of(&theme).unwrap_or(usize::MAX),
                theme,
                members,
            })
            .collect();
        let clustered = bounded_map(&jobs, self.workers, |job| {
            self.cluster_theme(job, &embeddings, state, iteration)
        });
        let mut subclusters = Vec::new();
        for (job, result) in jobs.iter().zip(clustered) {
            let (report, cells) = result?;
            tracing::info!(theme = %job.theme, n = job.members.len(), k = report.chosen_k, "clustered theme");
            record.k_selection.insert(job.theme.clone(), report);
            subclusters.extend(cells);
        }
        stage_done(Stage::Clustered);

        // summaries
        let text_of = |id: &str| self.corpus.get(id).map(|i| i.text.clone()).unwrap_or_default();
        let top_texts = |sc: &SubCluster| sc.top_ids.iter().map(|id| text_of(id)).collect::<Vec<_>>();
        if !config.ablation_no_summary {
            let results = bounded_map(&subclusters, runner.parallelism, |sc| {
                render_summary_prompt(&sc.theme, &top_texts(sc), config.summary_max_words)
                    .and_then(|p| summarize_subcluster(&p, runner, config.summary_max_words))
            });
            for (sc, result) in subclusters.iter_mut().zip(results) {
                let (text, call) = result.map_err(|source| PipelineError::Argument {
                    subcluster: sc.id.clone(),
                    source,
                })?;
                next.llm_call_log.push(call);
                sc.summary = Some(text);
            }
            stage_done(Stage::Summarized);
        }

        // talking points
        let results = bounded_map(&subclusters, runner.parallelism, |sc| {
            let input = match &sc.summary {
                Some(s) => s.clone(),
                None => top_texts(sc).join("\n"),
            };
            render_tp_prompt(&sc.theme, &input).and_then(|p| generate_talking_point(&p, runner))
        });
        let mut generated = Vec::with_capacity(subclusters.len());
        for (i, (sc, result)) in subclusters.iter().zip(results).enumerate() {
            let (text, call): (String, CallRecord) = result.map_err(|source| PipelineError::Argument {
                subcluster: sc.id.clone(),
                source,
            })?;
            next.llm_call_log.push(call);
            generated.push(Generated {
                subcluster: i,
                text,
                summary: sc.summary.clone(),
            });
        }
        stage_done(Stage::Generated);

        let tp_texts: Vec<String> = generated.iter().map(|g| g.text.clone()).collect();
        let tp_vectors = embed(&tp_texts, self.embedder.as_ref())?;
        let incumbents: BTreeSet<String> = next.active_talking_points().map(|t| t.id.clone()).collect();
        for (g, embedding) in generated.into_iter().zip(tp_vectors) {
            let sc = &mut subclusters[g.subcluster];
            let id = format!("tp{}", sc.id.trim_start_matches("sc"));
            sc.talking_point_id = Some(id.clone());
            next.talking_points.push(TalkingPoint {
                id,
                theme: sc.theme.clone(),
                text: g.text,
                embedding,
                iteration,
                status: TpStatus::Generated,
                merged_from: Vec::new(),
                merged_into: None,
                source_subclusters: vec![sc.id.clone()],
                summary: g.summary,
            });
        }
        record.new_talking_points = subclusters.len();

        // merging, against every active talking point
        let blocked = review::blocked_pairs(&next);
        let options = GroupingOptions {
            threshold: config.merge_threshold,
            scope: config.merge_scope,
            blocked: Some(&blocked),
            incumbents: Some(&incumbents),
        };
        let active: Vec<TalkingPoint> = next.active_talking_points().cloned().collect();
        let scopes: Vec<Vec<TalkingPoint>> = match config.merge_scope {
            MergeScope::Global => vec![active],
            MergeScope::Theme => {
                let mut by_theme: BTreeMap<String, Vec<TalkingPoint>> = BTreeMap::new();
                for tp in active {
                    by_theme.entry(tp.theme.clone()).or_default().push(tp);
                }
                by_theme.into_values().collect()
            }
        };
        let mut counter = 0;
        for tps in scopes {
            for mut group in similarity_groups_with(&tps, options)? {
                counter += 1;
                group.id = format!("mg-{iteration}-{counter:03}");
                group.iteration = iteration;
                record.merged_away += group.members.len() - 1;
                record.merge_groups.push(group.id.clone());
                next.merge_groups.push(group);
            }
        }
        review::refresh(&mut next);

        // assignment
        let (added, unassigned) = assign(
            &open,
            &embeddings,
            &next.talking_points,
            config.assign_threshold,
            iteration,
        )?;
        record.assignments_added = added.len();
        next.assignments.extend(added);
        review::refresh(&mut next);

        record.active_talking_points = next.active_talking_points().count();
        record.coverage_after = next.coverage(self.corpus);
        record.unassigned = unassigned;
        record.subclusters = subclusters;
        record.duration_ms = clock.elapsed().as_millis() as u64;
        tracing::info!(
            iteration,
            new_talking_points = record.new_talking_points,
            merged_away = record.merged_away,
            assigned = record.assignments_added,
            coverage = record.coverage_after,
            "iteration finished"
        );
        next.iterations.push(record);
        next.touch();
        Ok(next)
    }

    fn cluster_theme(
        &self,
        job: &ThemeJob,
        embeddings: &BTreeMap<String, Embedding>,
        state: &RunState,
        iteration: u32,
    ) -> Result<(KSelectionReport, Vec<SubCluster>), PipelineError> {
        let km = &state.config.kmeans;
        let points: Vec<&Embedding> = job.members.iter().map(|i| &embeddings[&i.id]).collect();
        let n = points.len();
        let seed = km
            .seed
            .wrapping_add(u64::from(iteration) << 32)
            .wrapping_add(job.index as u64 * 1_000);
        let k_hi = km.k_max.min(n / 5);
        let cluster_err = |source| PipelineError::Cluster {
            theme: job.theme.clone(),
            source,
        };
        let (report, clustering) = if n < 2 * km.k_min || k_hi < km.k_min {
            let single = kmeans_with(&points, 1, seed, km.params()).map_err(cluster_err)?;
            (KSelectionReport::degenerate(), single)
        } else {
            select_and_cluster(&points, km.k_min..=k_hi, seed, km.params()).map_err(cluster_err)?
        };
        let mut cells = Vec::with_capacity(clustering.k);
        for c in 0..clustering.k {
            let top = nearest_to_centroid(&clustering, &points, c, state.config.top_m).map_err(cluster_err)?;
            cells.push(SubCluster {
                id: format!("sc-{iteration}-{:02}-{c:02}", job.index),
                theme: job.theme.clone(),
                member_ids: clustering
                    .members(c)
                    .into_iter()
                    .map(|i| job.members[i].id.clone())
                    .collect(),
                top_ids: top.into_iter().map(|i| job.members[i].id.clone()).collect(),
                summary: None,
                talking_point_id: None,
            });
        }
        Ok((report, cells))
    }
}

/// Outcome of [`run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub iterations_run: u32,
    pub coverage: f64,
}

/// Runs up to `iterations` iterations, saving the state atomically after
/// each one when `save_to` is given. With `until_coverage`, stops as soon as
/// coverage reaches it, or when an iteration adds no assignments.
pub fn run(
    engine: &Engine,
    state: &mut RunState,
    iterations: u32,
    until_coverage: Option<f64>,
    save_to: Option<&Path>,
) -> Result<RunSummary, PipelineError> {
    let mut done = 0;
    while done < iterations {
        let coverage = state.coverage(engine.corpus());
        if until_coverage.is_some_and(|target| coverage >= target) {
            break;
        }
        let next = engine.run_iteration(state)?;
        if let Some(path) = save_to {
            next.save(path)?;
        }
        engine.clear_checkpoint();
        let progressed = next.iterations.last().is_some_and(|r| r.assignments_added > 0);
        *state = next;
        done += 1;
        if until_coverage.is_some() && !progressed {
            tracing::info!("no new assignments; stopping");
            break;
        }
    }
    Ok(RunSummary {
        iterations_run: done,
        coverage: state.coverage(engine.corpus()),
    })
}
