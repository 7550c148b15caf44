//! HTTP review API over a run state file.
//!
//! Reads share a lock; each verdict is applied to a copy of the state,
//! persisted atomically, and only then published, so a failed write leaves
//! both the file and the served state unchanged.

use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use argloop_core::corpus::Corpus;
use argloop_core::review::{self, ReviewError, StatusFilter, SubjectKind, Verdict};
use argloop_core::state::RunState;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;

const PLACEHOLDER_PAGE: &str = include_str!("placeholder.html");

pub struct ServiceState {
    state: RwLock<RunState>,
    corpus: Option<Corpus>,
    /// Where accepted verdicts are persisted; `None` keeps them in memory.
    state_path: Option<PathBuf>,
    ui_dir: Option<PathBuf>,
}

impl ServiceState {
    pub fn new(state: RunState, corpus: Option<Corpus>, state_path: Option<PathBuf>) -> Self {
        ServiceState {
            state: RwLock::new(state),
            corpus,
            state_path,
            ui_dir: None,
        }
    }

    /// Serves the review UI bundle from `dir` instead of the built-in page.
    pub fn with_ui_dir(mut self, dir: PathBuf) -> Self {
        self.ui_dir = Some(dir);
        self
    }

    pub async fn snapshot(&self) -> RunState {
        self.state.read().await.clone()
    }
}

pub fn router(service: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/api/talking-points", get(talking_points))
        .route("/api/merges", get(merges))
        .route("/api/verdicts", get(list_verdicts).post(post_verdict))
        .route("/api/progress", get(progress))
        .fallback(get(static_file))
        .with_state(service)
}

#[derive(Debug, Serialize)]
struct ApiError {
    error: String,
    code: &'static str,
}

fn error(status: StatusCode, code: &'static str, message: impl Into<String>) -> Response {
    (
        status,
        Json(ApiError {
            error: message.into(),
            code,
        }),
    )
        .into_response()
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    status: Option<String>,
    theme: Option<String>,
}

impl ListQuery {
    #[allow(clippy::result_large_err)]
    fn filter(&self) -> Result<StatusFilter, Response> {
        match &self.status {
            None => Ok(StatusFilter::Pending),
            Some(s) => s
                .parse()
                .map_err(|e: String| error(StatusCode::BAD_REQUEST, "bad_status", e)),
        }
    }
}

async fn talking_points(State(svc): State<Arc<ServiceState>>, Query(q): Query<ListQuery>) -> Response {
    let filter = match q.filter() {
        Ok(f) => f,
        Err(r) => return r,
    };
    let state = svc.state.read().await;
    let mut items = review::list_talking_points(&state, svc.corpus.as_ref(), filter);
    if let Some(theme) = &q.theme {
        items.retain(|i| &i.theme == theme);
    }
    Json(items).into_response()
}

async fn merges(State(svc): State<Arc<ServiceState>>, Query(q): Query<ListQuery>) -> Response {
    let filter = match q.filter() {
        Ok(f) => f,
        Err(r) => return r,
    };
    let state = svc.state.read().await;
    let mut items = review::list_merges(&state, filter);
    if let Some(theme) = &q.theme {
        items.retain(|i| &i.theme == theme);
    }
    Json(items).into_response()
}

async fn progress(State(svc): State<Arc<ServiceState>>) -> Response {
    let state = svc.state.read().await;
    Json(review::progress(&state)).into_response()
}

async fn list_verdicts(State(svc): State<Arc<ServiceState>>) -> Response {
    let state = svc.state.read().await;
    Json(&state.verdicts).into_response()
}

/// Body of `POST /api/verdicts`. The subject kind may be sent as `kind` or
/// `subject`.
#[derive(Debug, Deserialize)]
pub struct VerdictRequest {
    #[serde(alias = "subject")]
    pub kind: SubjectKind,
    pub subject_id: String,
    pub score: i64,
    pub annotator: String,
}

#[derive(Debug, Serialize)]
struct VerdictResponse {
    verdict: Verdict,
    decision: review::Decision,
}

async fn post_verdict(
    State(svc): State<Arc<ServiceState>>,
    body: Result<Json<VerdictRequest>, axum::extract::rejection::JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, "bad_request", e.body_text()),
    };
    let score = match u8::try_from(req.score) {
        Ok(s @ (0 | 1)) => s,
        _ => {
            return error(
                StatusCode::BAD_REQUEST,
                "invalid_score",
                ReviewError::InvalidScore(req.score).to_string(),
            )
        }
    };
    let verdict = Verdict {
        subject: req.kind,
        subject_id: req.subject_id,
        score,
        annotator: req.annotator.trim().to_string(),
        timestamp: chrono::Utc::now(),
    };

    let mut guard = svc.state.write().await;
    let mut next = guard.clone();
    if let Err(e) = review::submit_verdict(&mut next, verdict.clone()) {
        let (status, code) = match e {
            ReviewError::UnknownSubject { .. } => (StatusCode::NOT_FOUND, "unknown_subject"),
            ReviewError::InvalidScore(_) => (StatusCode::BAD_REQUEST, "invalid_score"),
            ReviewError::EmptyAnnotator => (StatusCode::BAD_REQUEST, "empty_annotator"),
            ReviewError::MergedAway { .. } => (StatusCode::CONFLICT, "merged_away"),
        };
        return error(status, code, e.to_string());
    }
    if let Some(path) = &svc.state_path {
        if let Err(e) = next.save(path) {
            tracing::error!(error = %e, "could not persist verdict");
            return error(StatusCode::INTERNAL_SERVER_ERROR, "persist_failed", e.to_string());
        }
    }
    let decided = review::decisions(&next.verdicts);
    let decision = review::decision_of(&decided, verdict.subject, &verdict.subject_id);
    *guard = next;
    tracing::info!(subject = %verdict.subject, id = %verdict.subject_id, score, "verdict recorded");
    Json(VerdictResponse { verdict, decision }).into_response()
}

/// Serves the API on `listener` until the future is dropped or fails.
pub async fn serve(listener: tokio::net::TcpListener, service: Arc<ServiceState>) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript; charset=utf-8",
        Some("css") => "text/css; charset=utf-8",
        Some("json" | "map") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("ico") => "image/x-icon",
        Some("woff2") => "font/woff2",
        _ => "application/octet-stream",
    }
}

/// Relative path inside the UI directory, or `None` if it tries to escape.
fn safe_relative(uri_path: &str) -> Option<PathBuf> {
    let trimmed = uri_path.trim_start_matches('/');
    let rel = if trimmed.is_empty() { "index.html" } else { trimmed };
    let path = PathBuf::from(rel);
    path.components()
        .all(|c| matches!(c, Component::Normal(_)))
        .then_some(path)
}

async fn static_file(State(svc): State<Arc<ServiceState>>, uri: Uri) -> Response {
    if uri.path().starts_with("/api/") {
        return error(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("no endpoint {}", uri.path()),
        );
    }
    let Some(dir) = &svc.ui_dir else {
        return if uri.path() == "/" || uri.path() == "/index.html" {
            Html(PLACEHOLDER_PAGE).into_response()
        } else {
            error(StatusCode::NOT_FOUND, "not_found", "no UI bundle configured")
        };
    };
    let Some(rel) = safe_relative(uri.path()) else {
        return error(StatusCode::BAD_REQUEST, "bad_path", "invalid path");
    };
    let full = dir.join(&rel);
    match tokio::fs::read(&full).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&full))], bytes).into_response(),
        Err(_) => error(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("{} not found", rel.display()),
        ),
    }
}
