//! Shared state, session lifecycle and the HTTP routes.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use relfeed_core::corpus::{Corpus, DocId};
use relfeed_core::session::{ArchivedList, EntryId, FeedbackSource, SessionConfig, SessionState};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex as AsyncMutex;
use tower_http::services::ServeDir;

use crate::config::ServiceConfig;
use crate::error::ApiError;
use crate::store::{Op, Store};
use crate::views::{
    document_detail, session_view, timeline_view, ArchivedView, CreateSession, DocumentDetail, FeedbackRequest,
    LockRequest, SessionView, TimelineView,
};

pub struct ApiSession {
    pub state: SessionState,
    /// Sequence number of the last applied operation (creation is 0).
    pub version: u64,
    pub created_at: DateTime<Utc>,
    pub last_activity: Instant,
    /// Set once the session has left the live map; holders must look it up
    /// again.
    evicted: bool,
}

impl ApiSession {
    fn new(state: SessionState, version: u64) -> Self {
        Self {
            state,
            version,
            created_at: Utc::now(),
            last_activity: Instant::now(),
            evicted: false,
        }
    }
}

type Handle = Arc<AsyncMutex<ApiSession>>;

pub struct AppState {
    pub corpus: Arc<Corpus>,
    pub config: ServiceConfig,
    session_config: SessionConfig,
    store: Store,
    sessions: Mutex<HashMap<String, Handle>>,
    /// Keywords of closed (or memory-only evicted) sessions.
    archives: Mutex<HashMap<String, Option<ArchivedList>>>,
}

pub type SharedState = Arc<AppState>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveResponse {
    pub session_id: String,
    pub closed: bool,
    /// This session's own distinct keywords with their latest values.
    pub archive: Option<ArchivedView>,
    /// Lists imported from earlier sessions.
    pub imported: Vec<ArchivedView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub documents: usize,
    pub vocabulary: usize,
    pub live_sessions: usize,
}

fn new_session_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

fn parse_entry(id: &str) -> Result<EntryId, ApiError> {
    id.parse().map_err(|_| ApiError::not_found("timeline entry", id))
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

impl AppState {
    pub fn new(corpus: Corpus, config: ServiceConfig) -> relfeed_core::Result<SharedState> {
        config.validate()?;
        let store = Store::new(config.store_dir.clone())?;
        Ok(Arc::new(Self {
            corpus: Arc::new(corpus),
            session_config: config.session_config(),
            config,
            store,
            sessions: Mutex::new(HashMap::new()),
            archives: Mutex::new(HashMap::new()),
        }))
    }

    pub fn live_sessions(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    fn closed_archive(&self, id: &str) -> Result<Option<Option<ArchivedList>>, ApiError> {
        if let Some(a) = self.archives.lock().unwrap().get(id) {
            return Ok(Some(a.clone()));
        }
        Ok(self.store.read_archive(id)?)
    }

    /// The live session, restoring it from the store if it was evicted.
    async fn live(self: &Arc<Self>, id: &str) -> Result<Handle, ApiError> {
        if let Some(h) = self.sessions.lock().unwrap().get(id) {
            return Ok(h.clone());
        }
        if !self.store.is_persistent() || self.closed_archive(id)?.is_some() {
            return Err(ApiError::not_found("session", id));
        }
        let app = self.clone();
        let owned = id.to_string();
        let restored = blocking(move || Ok(app.store.restore(&owned, &app.corpus)?)).await?;
        let Some((state, version)) = restored else {
            return Err(ApiError::not_found("session", id));
        };
        tracing::info!(session = id, version, "restored session");
        let handle = Arc::new(AsyncMutex::new(ApiSession::new(state, version)));
        Ok(self
            .sessions
            .lock()
            .unwrap()
            .entry(id.to_string())
            .or_insert(handle)
            .clone())
    }

    /// Locks the live session, retrying if it was evicted meanwhile.
    async fn lock_live(self: &Arc<Self>, id: &str) -> Result<tokio::sync::OwnedMutexGuard<ApiSession>, ApiError> {
        for _ in 0..3 {
            let guard = self.live(id).await?.lock_owned().await;
            if !guard.evicted {
                return Ok(guard);
            }
        }
        Err(ApiError::not_found("session", id))
    }

    pub async fn create_session(self: &Arc<Self>, request: CreateSession) -> Result<SessionView, ApiError> {
        let query = request.query.trim().to_string();
        if query.is_empty() {
            return Err(ApiError::bad_request("query must not be empty"));
        }
        let mut archived = Vec::with_capacity(request.import_archive.len());
        for source in &request.import_archive {
            let list = self.archive_of(source).await?.archive.map(|v| ArchivedList {
                session_id: v.session_id,
                terms: v.terms.into_iter().map(|t| (t.term, t.value)).collect(),
            });
            archived.push(list.unwrap_or_else(|| ArchivedList {
                session_id: source.clone(),
                terms: Vec::new(),
            }));
        }
        let id = new_session_id();
        let app = self.clone();
        let config = self.session_config;
        let (state, view) = blocking(move || {
            let state =
                SessionState::start(&id, &query, &app.corpus, config, archived.clone()).map_err(ApiError::from_create)?;
            app.store.append(&id, 0, &Op::Create { query, config, archived })?;
            let view = session_view(&state, &app.corpus, 0);
            Ok((state, view))
        })
        .await?;
        tracing::info!(session = %state.session_id, "created session");
        self.sessions.lock().unwrap().insert(
            state.session_id.clone(),
            Arc::new(AsyncMutex::new(ApiSession::new(state, 0))),
        );
        Ok(view)
    }

    /// Applies one operation to a copy of the state and swaps it in only if
    /// both the refit and the log append succeed.
    async fn mutate<F>(self: &Arc<Self>, id: &str, make_op: F) -> Result<SessionView, ApiError>
    where
        F: FnOnce(&SessionState) -> Result<Op, ApiError> + Send + 'static,
    {
        let mut guard = self.lock_live(id).await?;
        let app = self.clone();
        let id = id.to_string();
        blocking(move || {
            let op = make_op(&guard.state)?;
            let mut next = guard.state.clone();
            op.apply(&mut next, &app.corpus)?;
            let seq = guard.version + 1;
            app.store.append(&id, seq, &op)?;
            if seq % app.config.snapshot_every == 0 {
                if let Err(e) = app.store.write_snapshot(&id, seq, &next) {
                    tracing::warn!(session = %id, error = %e, "snapshot failed");
                }
            }
            guard.state = next;
            guard.version = seq;
            guard.last_activity = Instant::now();
            Ok(session_view(&guard.state, &app.corpus, seq))
        })
        .await
    }

    pub async fn get_session(self: &Arc<Self>, id: &str) -> Result<SessionView, ApiError> {
        let mut guard = self.lock_live(id).await?;
        guard.last_activity = Instant::now();
        Ok(session_view(&guard.state, &self.corpus, guard.version))
    }

    pub async fn timeline(self: &Arc<Self>, id: &str) -> Result<TimelineView, ApiError> {
        let mut guard = self.lock_live(id).await?;
        guard.last_activity = Instant::now();
        Ok(timeline_view(&guard.state))
    }

    pub async fn feedback(self: &Arc<Self>, id: &str, request: FeedbackRequest) -> Result<SessionView, ApiError> {
        let FeedbackRequest { term, entry_id, value } = request;
        let entry = match (&term, &entry_id) {
            (Some(_), None) => None,
            (None, Some(e)) => Some(parse_entry(e)?),
            _ => return Err(ApiError::invalid("exactly one of term and entry_id is required")),
        };
        self.mutate(id, move |state| {
            Ok(match (entry, term) {
                (Some(entry_id), _) => Op::Adjust { entry_id, value },
                (None, Some(term)) => {
                    let on_radar = state.radar_keywords().iter().any(|k| k.term == term)
                        || state.timeline.find_active(&term).is_some();
                    let archived = state
                        .archived_keywords
                        .iter()
                        .any(|a| a.terms.iter().any(|(t, _)| *t == term));
                    let source = if archived && !on_radar {
                        FeedbackSource::ArchivedSession
                    } else {
                        FeedbackSource::UserRadar
                    };
                    Op::Feedback { term, value, source }
                }
                (None, None) => unreachable!("checked above"),
            })
        })
        .await
    }

    pub async fn lock_entry(self: &Arc<Self>, id: &str, entry: &str) -> Result<SessionView, ApiError> {
        let entry_id = parse_entry(entry)?;
        self.mutate(id, move |_| Ok(Op::Lock { entry_id })).await
    }

    pub async fn delete_entry(self: &Arc<Self>, id: &str, entry: &str) -> Result<SessionView, ApiError> {
        let entry_id = parse_entry(entry)?;
        self.mutate(id, move |_| Ok(Op::Delete { entry_id })).await
    }

    pub async fn remove_archived(self: &Arc<Self>, id: &str, source: &str) -> Result<SessionView, ApiError> {
        let session_id = source.to_string();
        self.mutate(id, move |_| Ok(Op::RemoveArchive { session_id })).await
    }

    pub async fn archive_of(self: &Arc<Self>, id: &str) -> Result<ArchiveResponse, ApiError> {
        if let Some(archive) = self.closed_archive(id)? {
            return Ok(ArchiveResponse {
                session_id: id.to_string(),
                closed: true,
                archive: archive.as_ref().map(ArchivedView::from),
                imported: Vec::new(),
            });
        }
        let guard = self.lock_live(id).await?;
        Ok(ArchiveResponse {
            session_id: id.to_string(),
            closed: false,
            archive: guard.state.archive().as_ref().map(ArchivedView::from),
            imported: guard.state.archived_keywords.iter().map(ArchivedView::from).collect(),
        })
    }

    /// Ends a session; its keywords stay available for import.
    pub async fn close_session(self: &Arc<Self>, id: &str) -> Result<ArchiveResponse, ApiError> {
        let mut guard = self.lock_live(id).await?;
        let archive = guard.state.archive();
        self.store.write_archive(id, archive.as_ref())?;
        guard.evicted = true;
        self.sessions.lock().unwrap().remove(id);
        self.archives.lock().unwrap().insert(id.to_string(), archive.clone());
        tracing::info!(session = id, "closed session");
        Ok(ArchiveResponse {
            session_id: id.to_string(),
            closed: true,
            archive: archive.as_ref().map(ArchivedView::from),
            imported: Vec::new(),
        })
    }

    /// Drops sessions idle for longer than the TTL, snapshotting them first
    /// (or, without a store, keeping their keywords for import). Sessions
    /// busy with a request are skipped.
    pub fn evict_idle(&self, now: Instant) -> usize {
        let ttl = self.config.ttl();
        let mut sessions = self.sessions.lock().unwrap();
        let mut evicted = Vec::new();
        for (id, handle) in sessions.iter() {
            let Ok(mut guard) = handle.try_lock() else {
                continue;
            };
            if now.saturating_duration_since(guard.last_activity) < ttl {
                continue;
            }
            if self.store.is_persistent() {
                if let Err(e) = self.store.write_snapshot(id, guard.version, &guard.state) {
                    tracing::warn!(session = %id, error = %e, "snapshot before eviction failed; keeping session");
                    continue;
                }
            } else {
                self.archives.lock().unwrap().insert(id.clone(), guard.state.archive());
            }
            guard.evicted = true;
            evicted.push(id.clone());
        }
        for id in &evicted {
            sessions.remove(id);
            tracing::info!(session = %id, "evicted idle session");
        }
        evicted.len()
    }

    pub fn spawn_evictor(self: &Arc<Self>) -> tokio::task::JoinHandle<()> {
        let app = Arc::downgrade(self);
        let period = (self.config.ttl() / 4).clamp(Duration::from_secs(1), Duration::from_secs(60));
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            loop {
                tick.tick().await;
                let Some(app) = app.upgrade() else { break };
                app.evict_idle(Instant::now());
            }
        })
    }

    pub fn document(&self, id: u32) -> Result<DocumentDetail, ApiError> {
        document_detail(&self.corpus, DocId(id)).ok_or_else(|| ApiError::not_found("document", &id.to_string()))
    }

    pub fn health(&self) -> Health {
        Health {
            status: "ok".into(),
            documents: self.corpus.docs.len(),
            vocabulary: self.corpus.vocab.len(),
            live_sessions: self.live_sessions(),
        }
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    match payload {
        Ok(Json(v)) => Ok(v),
        Err(r) if r.status() == StatusCode::UNPROCESSABLE_ENTITY => Err(ApiError::invalid(r.body_text())),
        Err(r) => Err(ApiError::bad_request(r.body_text())),
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn health(State(app): State<SharedState>) -> Json<Health> {
    Json(app.health())
}

async fn create_session(
    State(app): State<SharedState>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let view = app.create_session(body(payload)?).await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(app): State<SharedState>, Path(id): Path<String>) -> ApiResult<SessionView> {
    app.get_session(&id).await.map(Json)
}

async fn close_session(State(app): State<SharedState>, Path(id): Path<String>) -> ApiResult<ArchiveResponse> {
    app.close_session(&id).await.map(Json)
}

async fn feedback(
    State(app): State<SharedState>,
    Path(id): Path<String>,
    payload: Result<Json<FeedbackRequest>, JsonRejection>,
) -> ApiResult<SessionView> {
    app.feedback(&id, body(payload)?).await.map(Json)
}

async fn lock(
    State(app): State<SharedState>,
    Path(id): Path<String>,
    payload: Result<Json<LockRequest>, JsonRejection>,
) -> ApiResult<SessionView> {
    let request = body(payload)?;
    app.lock_entry(&id, &request.entry_id).await.map(Json)
}

async fn delete_entry(
    State(app): State<SharedState>,
    Path((id, entry)): Path<(String, String)>,
) -> ApiResult<SessionView> {
    app.delete_entry(&id, &entry).await.map(Json)
}

async fn timeline(State(app): State<SharedState>, Path(id): Path<String>) -> ApiResult<TimelineView> {
    app.timeline(&id).await.map(Json)
}

async fn archive(State(app): State<SharedState>, Path(id): Path<String>) -> ApiResult<ArchiveResponse> {
    app.archive_of(&id).await.map(Json)
}

async fn remove_archived(
    State(app): State<SharedState>,
    Path((id, source)): Path<(String, String)>,
) -> ApiResult<SessionView> {
    app.remove_archived(&id, &source).await.map(Json)
}

async fn document(State(app): State<SharedState>, Path(id): Path<String>) -> ApiResult<DocumentDetail> {
    let doc = id.parse().map_err(|_| ApiError::not_found("document", &id))?;
    app.document(doc).map(Json)
}

pub fn router(app: SharedState) -> Router {
    let static_dir = app.config.static_dir.clone();
    let api = Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(close_session))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/feedback/{entry_id}", delete(delete_entry))
        .route("/sessions/{id}/lock", post(lock))
        .route("/sessions/{id}/timeline", get(timeline))
        .route("/sessions/{id}/archive", get(archive))
        .route("/sessions/{id}/archived/{source_id}", delete(remove_archived))
        .route("/documents/{id}", get(document))
        .with_state(app);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
