//! HTTP API for live conflict resolution.
//!
//! | route                  | body                                           |
//! |------------------------|------------------------------------------------|
//! | `GET /api/state`       | stage, iteration, document and conflict counts |
//! | `GET /api/conflicts`   | documents with conflicts, text and choices     |
//! | `POST /api/resolutions`| list of resolutions; last write wins           |
//! | `GET /api/doc/{id}`    | one document record                            |
//!
//! Resolutions are persisted to `resolutions/<stage>.json` on every accepted
//! write. Writes are serialized; readers see either the state before or after
//! a write, never a partial one.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use annoflow_core::merge::{check_choice, Choice, Conflict, MergedDocument, Resolution};
use annoflow_core::{Document, LabelSchema, Payload};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{watch, RwLock};

use crate::error::{CliError, CliResult};
use crate::store::{write_json, Stage, Store, StoreLock};

struct Session {
    store: Store,
    stage: Stage,
    schema: LabelSchema,
    docs: BTreeMap<String, Document>,
    merged: Vec<MergedDocument>,
    conflicts: BTreeMap<String, (usize, usize)>,
    choices: RwLock<BTreeMap<String, Choice>>,
    done: watch::Sender<bool>,
}

impl Session {
    fn conflict(&self, id: &str) -> Option<&Conflict> {
        self.conflicts.get(id).map(|&(d, c)| &self.merged[d].conflicts[c])
    }

    /// Resolutions in merge order.
    fn ordered(&self, choices: &BTreeMap<String, Choice>) -> Vec<Resolution> {
        self.merged
            .iter()
            .flat_map(|m| &m.conflicts)
            .filter_map(|c| {
                choices
                    .get(&c.conflict_id)
                    .map(|ch| Resolution::new(c.conflict_id.clone(), ch.clone()))
            })
            .collect()
    }
}

/// Shared state of a running resolution session.
#[derive(Clone)]
pub struct Api(Arc<Session>);

impl Api {
    /// Loads the merge result of `stage` and any saved resolutions.
    pub fn load(store: Store, stage: Stage) -> CliResult<Api> {
        let manifest = store.manifest()?;
        let merged = store.merges(stage)?.ok_or_else(|| {
            CliError::new("not_merged", format!("stage {stage} is not merged; run `annoflow merge` first"))
        })?;
        if store.pool_path(stage).is_file() {
            return Err(CliError::new("already_applied", format!("stage {stage} is already applied")));
        }
        let mut conflicts = BTreeMap::new();
        for (d, m) in merged.iter().enumerate() {
            for (c, conflict) in m.conflicts.iter().enumerate() {
                conflicts.insert(conflict.conflict_id.clone(), (d, c));
            }
        }
        let mut choices = BTreeMap::new();
        for r in store.resolutions(stage)? {
            if conflicts.contains_key(&r.conflict_id) {
                choices.insert(r.conflict_id, r.choice);
            }
        }
        let all_done = choices.len() == conflicts.len();
        let docs = store.doc_index()?;
        Ok(Api(Arc::new(Session {
            store,
            stage,
            schema: manifest.schema,
            docs,
            merged,
            conflicts,
            choices: RwLock::new(choices),
            done: watch::channel(all_done).0,
        })))
    }

    pub fn stage(&self) -> Stage {
        self.0.stage
    }

    /// Fires once every conflict has a choice.
    pub fn all_resolved(&self) -> watch::Receiver<bool> {
        self.0.done.subscribe()
    }

    pub fn router(self) -> Router {
        Router::new()
            .route("/api/state", get(state))
            .route("/api/conflicts", get(conflicts))
            .route("/api/resolutions", post(post_resolutions))
            .route("/api/doc/{id}", get(doc))
            .with_state(self)
    }
}

#[derive(Debug, Serialize)]
struct ApiError {
    code: &'static str,
    message: String,
}

fn api_error(status: StatusCode, code: &'static str, message: String) -> Response {
    (status, Json(ApiError { code, message })).into_response()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub stage: String,
    pub iteration: u32,
    pub documents: usize,
    pub documents_with_conflicts: usize,
    pub total: usize,
    pub resolved: usize,
    pub by_kind: BTreeMap<String, usize>,
}

async fn state(State(api): State<Api>) -> Json<StateView> {
    let s = &api.0;
    let choices = s.choices.read().await;
    let mut by_kind = BTreeMap::new();
    for m in &s.merged {
        for c in &m.conflicts {
            *by_kind.entry(c.kind.as_str().to_string()).or_default() += 1;
        }
    }
    Json(StateView {
        stage: s.stage.to_string(),
        iteration: s.stage.iteration(),
        documents: s.merged.len(),
        documents_with_conflicts: s.merged.iter().filter(|m| !m.is_conflict_free()).count(),
        total: s.conflicts.len(),
        resolved: choices.len(),
        by_kind,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictDoc {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_b: Option<String>,
    pub agreed: Option<Payload>,
    pub conflicts: Vec<Conflict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictsView {
    pub stage: String,
    pub total: usize,
    pub resolved: usize,
    pub documents: Vec<ConflictDoc>,
}

async fn conflicts(State(api): State<Api>) -> Json<ConflictsView> {
    let s = &api.0;
    let choices = s.choices.read().await;
    let documents = s
        .merged
        .iter()
        .filter(|m| !m.is_conflict_free())
        .map(|m| {
            let doc = s.docs.get(&m.doc_id);
            ConflictDoc {
                doc_id: m.doc_id.clone(),
                text: doc.map(|d| d.text.clone()).unwrap_or_default(),
                text_b: doc.and_then(|d| d.text_b.clone()),
                agreed: m.agreed.clone(),
                conflicts: m
                    .conflicts
                    .iter()
                    .map(|c| Conflict {
                        resolution: choices.get(&c.conflict_id).cloned().or_else(|| c.resolution.clone()),
                        ..c.clone()
                    })
                    .collect(),
            }
        })
        .collect();
    Json(ConflictsView {
        stage: s.stage.to_string(),
        total: s.conflicts.len(),
        resolved: choices.len(),
        documents,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub conflict_id: String,
    pub code: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResult {
    pub accepted: Vec<String>,
    pub rejected: Vec<Rejection>,
    pub resolved: usize,
    pub total: usize,
}

async fn post_resolutions(State(api): State<Api>, body: Result<Json<Vec<Resolution>>, JsonRejection>) -> Response {
    let Json(batch) = match body {
        Ok(b) => b,
        Err(e) => return api_error(StatusCode::BAD_REQUEST, "malformed_json", e.body_text()),
    };
    let s = &api.0;
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    let mut updates = Vec::new();
    for r in batch {
        let reject = |code: &str, reason: String| Rejection {
            conflict_id: r.conflict_id.clone(),
            code: code.to_string(),
            reason,
        };
        let Some(conflict) = s.conflict(&r.conflict_id) else {
            rejected.push(reject("unknown_conflict", format!("no conflict '{}' in {}", r.conflict_id, s.stage)));
            continue;
        };
        let Some(doc) = s.docs.get(&conflict.doc_id) else {
            rejected.push(reject("unknown_document", format!("document '{}' is missing", conflict.doc_id)));
            continue;
        };
        match check_choice(conflict, &r.choice, doc, &s.schema) {
            Ok(()) => {
                accepted.push(r.conflict_id.clone());
                updates.push(r);
            }
            Err(e) => rejected.push(reject(e.code(), e.to_string())),
        }
    }

    let mut choices = s.choices.write().await;
    if !updates.is_empty() {
        let mut next = choices.clone();
        for r in updates {
            next.insert(r.conflict_id, r.choice);
        }
        if let Err(e) = write_json(&s.store.resolutions_path(s.stage), &s.ordered(&next)) {
            return api_error(StatusCode::INTERNAL_SERVER_ERROR, e.code, e.message);
        }
        *choices = next;
    }
    let resolved = choices.len();
    let total = s.conflicts.len();
    if resolved == total {
        s.done.send_replace(true);
    }
    Json(SubmitResult {
        accepted,
        rejected,
        resolved,
        total,
    })
    .into_response()
}

async fn doc(State(api): State<Api>, Path(id): Path<String>) -> Response {
    match api.0.docs.get(&id) {
        Some(d) => Json(d.clone()).into_response(),
        None => api_error(StatusCode::NOT_FOUND, "unknown_document", format!("no document '{id}'")),
    }
}

/// Stage served by default: the earliest merged stage not yet applied.
pub fn pending_stage(store: &Store) -> CliResult<Stage> {
    for stage in store.planned_stages()? {
        if store.merge_path(stage).is_file() && !store.pool_path(stage).is_file() {
            return Ok(stage);
        }
    }
    Err(CliError::new("nothing_to_resolve", "no merged stage is waiting for resolutions"))
}

/// Serves the API on `127.0.0.1:port` until interrupted or, with
/// `exit_when_resolved`, until every conflict has a choice. Holds the store
/// lock for the whole session.
pub fn serve(
    store: &Store,
    stage: Option<Stage>,
    port: u16,
    exit_when_resolved: bool,
    on_ready: impl FnOnce(SocketAddr, &Api),
) -> CliResult<()> {
    let _lock: StoreLock = store.lock()?;
    let stage = match stage {
        Some(s) => s,
        None => pending_stage(store)?,
    };
    let api = Api::load(store.clone(), stage)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::new("runtime", e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", port))
            .await
            .map_err(|e| CliError::new("bind", format!("127.0.0.1:{port}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| CliError::new("bind", e.to_string()))?;
        on_ready(addr, &api);
        let mut done = api.all_resolved();
        let shutdown = async move {
            let finished = async {
                if exit_when_resolved {
                    let _ = done.wait_for(|d| *d).await;
                } else {
                    std::future::pending::<()>().await;
                }
            };
            tokio::select! {
                _ = tokio::signal::ctrl_c() => {}
                _ = finished => {}
            }
        };
        axum::serve(listener, api.router())
            .with_graceful_shutdown(shutdown)
            .await
            .map_err(|e| CliError::new("serve", e.to_string()))
    })
}

