//! Persisted run state: config snapshot, talking points, assignments,
//! per-iteration records, the LLM call log and the verdict log.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::argumentation::{sha256_hex, CallRecord};
use crate::assignment::{coverage, Assignment};
use crate::clustering::KSelectionReport;
use crate::config::Config;
use crate::consolidation::{MergeGroup, TalkingPoint};
use crate::corpus::{write_corpus, Corpus, CorpusFormat};
use crate::evaluation::LabelRecord;
use crate::review::Verdict;

pub const STATE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("state file {0} not found")]
    NotFound(PathBuf),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("state file {path} is not valid: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("state format version {found} is not supported (expected {STATE_FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("state {path} is locked by another process (lock file {lock})")]
    Locked { path: PathBuf, lock: PathBuf },
    #[error("corpus does not match the one recorded in the state (digest {expected}, got {found})")]
    CorpusMismatch { expected: String, found: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StateError + '_ {
    move |source| StateError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRef {
    pub path: Option<PathBuf>,
    /// SHA-256 of the canonical JSONL serialization.
    pub digest: String,
    pub instances: usize,
}

pub fn corpus_digest(corpus: &Corpus) -> String {
    let mut buf = Vec::new();
    write_corpus(corpus, CorpusFormat::Jsonl, &mut buf).expect("writing to memory");
    sha256_hex(&buf)
}

/// A k-means cell inside one theme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubCluster {
    pub id: String,
    pub theme: String,
    pub member_ids: Vec<String>,
    /// Members closest to the centroid, nearest first.
    pub top_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub talking_point_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub started_at: DateTime<Utc>,
    pub duration_ms: u64,
    pub ablation_no_summary: bool,
    pub unassigned_before: usize,
    pub coverage_before: f64,
    pub coverage_after: f64,
    /// Talking points generated this iteration, before merging.
    pub new_talking_points: usize,
    /// Talking points (new or earlier) merged away this iteration.
    pub merged_away: usize,
    /// Active talking points after the iteration.
    pub active_talking_points: usize,
    pub assignments_added: usize,
    pub k_selection: BTreeMap<String, KSelectionReport>,
    pub subclusters: Vec<SubCluster>,
    pub merge_groups: Vec<String>,
    pub unassigned: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub format_version: u32,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub config: Config,
    pub corpus: CorpusRef,
    pub themes: Vec<String>,
    pub talking_points: Vec<TalkingPoint>,
    pub merge_groups: Vec<MergeGroup>,
    pub assignments: Vec<Assignment>,
    pub iterations: Vec<IterationRecord>,
    pub llm_call_log: Vec<CallRecord>,
    pub verdicts: Vec<Verdict>,
    #[serde(default)]
    pub labels: Vec<LabelRecord>,
}

impl RunState {
    pub fn new(config: Config, corpus: &Corpus, corpus_path: Option<PathBuf>) -> Self {
        let now = Utc::now();
        RunState {
            format_version: STATE_FORMAT_VERSION,
            created_at: now,
            updated_at: now,
            config,
            corpus: CorpusRef {
                path: corpus_path,
                digest: corpus_digest(corpus),
                instances: corpus.len(),
            },
            themes: corpus.registry().iter().map(String::from).collect(),
            talking_points: Vec::new(),
            merge_groups: Vec::new(),
            assignments: Vec::new(),
            iterations: Vec::new(),
            llm_call_log: Vec::new(),
            verdicts: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn touch(&mut self) {
        self.updated_at = Utc::now();
    }

    pub fn check_corpus(&self, corpus: &Corpus) -> Result<(), StateError> {
        let found = corpus_digest(corpus);
        if found != self.corpus.digest {
            return Err(StateError::CorpusMismatch {
                expected: self.corpus.digest.clone(),
                found,
            });
        }
        Ok(())
    }

    pub fn talking_point(&self, id: &str) -> Option<&TalkingPoint> {
        self.talking_points.iter().find(|t| t.id == id)
    }

    pub fn active_talking_points(&self) -> impl Iterator<Item = &TalkingPoint> {
        self.talking_points.iter().filter(|t| t.is_active())
    }

    pub fn assigned_ids(&self) -> BTreeSet<&str> {
        self.assignments.iter().map(|a| a.instance_id.as_str()).collect()
    }

    pub fn coverage(&self, corpus: &Corpus) -> f64 {
        coverage(&self.assignments, corpus).unwrap_or(0.0)
    }

    pub fn next_iteration(&self) -> u32 {
        self.iterations.len() as u32 + 1
    }

    /// Copy with wall-clock fields zeroed, for reproducibility comparisons.
    pub fn normalized(&self) -> RunState {
        let mut s = self.clone();
        s.created_at = DateTime::UNIX_EPOCH;
        s.updated_at = DateTime::UNIX_EPOCH;
        for it in &mut s.iterations {
            it.started_at = DateTime::UNIX_EPOCH;
            it.duration_ms = 0;
        }
        for c in &mut s.llm_call_log {
            c.duration_ms = 0;
        }
        for v in &mut s.verdicts {
            v.timestamp = DateTime::UNIX_EPOCH;
        }
        for l in &mut s.labels {
            l.recorded_at = DateTime::UNIX_EPOCH;
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state serializes")
    }

    /// SHA-256 of the normalized JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(self.normalized().to_json().as_bytes())
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self, StateError> {
        let state: RunState = serde_json::from_str(text).map_err(|e| StateError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if state.format_version != STATE_FORMAT_VERSION {
            return Err(StateError::Version {
                found: state.format_version,
            });
        }
        Ok(state)
    }

    pub fn load(path: &Path) -> Result<Self, StateError> {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(StateError::NotFound(path.to_path_buf())),
            Err(e) => return Err(io_err(path)(e)),
        };
        Self::from_json(&text, path)
    }

    /// Writes to a temporary file in the same directory and renames it over
    /// `path`, so readers never see a partial document.
    pub fn save(&self, path: &Path) -> Result<(), StateError> {
        write_atomic(path, self.to_json().as_bytes())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StateError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| io_err(path)(e.error))?;
    Ok(())
}

/// Exclusive writer lock held as `<state>.lock` for the guard's lifetime.
#[derive(Debug)]
pub struct StateLock {
    path: PathBuf,
}

impl StateLock {
    pub fn lock_path(state: &Path) -> PathBuf {
        let mut name = state.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".lock");
        state.with_file_name(name)
    }

    pub fn acquire(state: &Path) -> Result<Self, StateError> {
        let lock = Self::lock_path(state);
        match std::fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(StateLock { path: lock })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(StateError::Locked {
                path: state.to_path_buf(),
                lock,
            }),
            Err(e) => Err(io_err(&lock)(e)),
        }
    }
}

impl Drop for StateLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}
