//! Annotation service: hands out documents to annotators and appends their
//! submissions to a dataset-format JSONL store.

use std::collections::{BTreeSet, HashMap};
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::{Context, Result};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use humal_core::corpus::{
    meets_highlight_threshold, read_dataset, AnnotationRecord, DocumentRecord, Label,
    DEFAULT_MIN_HIGHLIGHT_FRACTION,
};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub data: PathBuf,
    pub store: PathBuf,
    pub min_highlight_frac: f64,
    pub target_annotators: usize,
}

impl ServerConfig {
    pub fn new(data: PathBuf, store: PathBuf) -> Self {
        ServerConfig {
            data,
            store,
            min_highlight_frac: DEFAULT_MIN_HIGHLIGHT_FRACTION,
            target_annotators: 3,
        }
    }
}

struct Task {
    id: String,
    text: String,
    words: Vec<String>,
    annotators: BTreeSet<String>,
}

struct Inner {
    tasks: Vec<Task>,
    index: HashMap<String, usize>,
    store: File,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Mutex<Inner>>,
    min_highlight_frac: f64,
    target_annotators: usize,
}

impl AppState {
    /// Load the task pool and replay the store so finished work is not
    /// offered again.
    pub fn open(cfg: &ServerConfig) -> Result<Self> {
        let docs = read_dataset(&cfg.data).with_context(|| format!("loading {}", cfg.data.display()))?;
        let mut tasks = Vec::with_capacity(docs.len());
        let mut index = HashMap::new();
        for d in docs {
            if index.contains_key(&d.id) {
                anyhow::bail!("{}: duplicate document id {}", cfg.data.display(), d.id);
            }
            index.insert(d.id.clone(), tasks.len());
            tasks.push(Task {
                annotators: d.annotations.iter().map(|a| a.annotator_id.clone()).collect(),
                id: d.id,
                text: d.text,
                words: d.words,
            });
        }
        if cfg.store.exists() {
            let stored = read_dataset(&cfg.store).with_context(|| format!("replaying {}", cfg.store.display()))?;
            for d in stored {
                match index.get(&d.id) {
                    Some(&i) => tasks[i]
                        .annotators
                        .extend(d.annotations.into_iter().map(|a| a.annotator_id)),
                    None => warn!("store entry for unknown document {}", d.id),
                }
            }
        }
        let store = open_store(&cfg.store)?;
        info!("{} tasks loaded, store {}", tasks.len(), cfg.store.display());
        Ok(AppState {
            inner: Arc::new(Mutex::new(Inner { tasks, index, store })),
            min_highlight_frac: cfg.min_highlight_frac,
            target_annotators: cfg.target_annotators,
        })
    }
}

fn open_store(path: &Path) -> Result<File> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening store {}", path.display()))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct AnnotationTask {
    pub doc_id: String,
    pub text: String,
    pub words: Vec<String>,
    pub completed_annotators: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Submission {
    pub doc_id: String,
    pub annotator_id: String,
    pub highlighted_word_indices: Vec<usize>,
    pub label: Label,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Accepted {
    pub doc_id: String,
    pub annotator_id: String,
    pub annotations: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Progress {
    pub documents: usize,
    pub target_annotators: usize,
    pub complete: usize,
    pub annotations: usize,
}

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    pub annotator: String,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/tasks/next", get(next_task))
        .route("/annotations", post(submit))
        .route("/progress", get(progress))
        .with_state(state)
}

fn lock(state: &AppState) -> std::sync::MutexGuard<'_, Inner> {
    // a panic while holding the lock cannot leave a half-written record
    state.inner.lock().unwrap_or_else(|e| e.into_inner())
}

/// Least-annotated document the annotator has not done yet, below target.
async fn next_task(
    State(state): State<AppState>,
    Query(q): Query<NextQuery>,
) -> Result<Json<AnnotationTask>, ApiError> {
    let inner = lock(&state);
    let task = inner
        .tasks
        .iter()
        .filter(|t| t.annotators.len() < state.target_annotators && !t.annotators.contains(&q.annotator))
        .min_by_key(|t| t.annotators.len())
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no task left for {}", q.annotator)))?;
    Ok(Json(AnnotationTask {
        doc_id: task.id.clone(),
        text: task.text.clone(),
        words: task.words.clone(),
        completed_annotators: task.annotators.iter().cloned().collect(),
    }))
}

async fn submit(
    State(state): State<AppState>,
    Json(sub): Json<Submission>,
) -> Result<(StatusCode, Json<Accepted>), ApiError> {
    let mut guard = lock(&state);
    let inner = &mut *guard;
    let &i = inner
        .index
        .get(&sub.doc_id)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown document {}", sub.doc_id)))?;
    let task = &mut inner.tasks[i];
    let words = task.words.len();
    let hits: BTreeSet<usize> = sub.highlighted_word_indices.iter().copied().collect();
    if let Some(&bad) = hits.iter().find(|&&h| h >= words) {
        return Err(ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("word index {bad} out of range for {words} words"),
        ));
    }
    if !meets_highlight_threshold(hits.len(), words, state.min_highlight_frac) {
        return Err(ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!(
                "highlighted {} of {words} words, below the minimum fraction {}",
                hits.len(),
                state.min_highlight_frac
            ),
        ));
    }
    if task.annotators.contains(&sub.annotator_id) {
        return Err(ApiError(
            StatusCode::CONFLICT,
            format!("{} already annotated {}", sub.annotator_id, sub.doc_id),
        ));
    }
    let record = DocumentRecord {
        id: task.id.clone(),
        text: task.text.clone(),
        self_report_label: None,
        resolved_label: None,
        annotations: vec![AnnotationRecord {
            annotator_id: sub.annotator_id.clone(),
            highlighted_word_indices: hits.into_iter().collect(),
            label: sub.label,
        }],
    };
    let mut line = serde_json::to_vec(&record).map_err(internal)?;
    line.push(b'\n');
    // one write per record while holding the lock keeps records whole
    inner.store.write_all(&line).map_err(internal)?;
    inner.store.flush().map_err(internal)?;
    task.annotators.insert(sub.annotator_id.clone());
    Ok((
        StatusCode::CREATED,
        Json(Accepted {
            doc_id: sub.doc_id,
            annotator_id: sub.annotator_id,
            annotations: task.annotators.len(),
        }),
    ))
}

fn internal<E: std::fmt::Display>(e: E) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

async fn progress(State(state): State<AppState>) -> Json<Progress> {
    let inner = lock(&state);
    Json(Progress {
        documents: inner.tasks.len(),
        target_annotators: state.target_annotators,
        complete: inner
            .tasks
            .iter()
            .filter(|t| t.annotators.len() >= state.target_annotators)
            .count(),
        annotations: inner.tasks.iter().map(|t| t.annotators.len()).sum(),
    })
}

pub async fn serve(cfg: ServerConfig, port: u16) -> Result<()> {
    let app = router(AppState::open(&cfg)?);
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port))
        .await
        .with_context(|| format!("binding port {port}"))?;
    info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}
