use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use narrative_core::ima::{annotate_transcript, salience_report, trajectory};
use narrative_core::orchestrator::word_stats;
use narrative_core::par::Execution;
use narrative_core::supervisor::{average_score, evaluate_transcript};
use narrative_core::transcript::TranscriptWriter;
use narrative_core::{state_distribution, Engine, Transcript, Variant};
use tokio::sync::Mutex as AsyncMutex;
use tower_http::cors::CorsLayer;

use crate::api::{
    AnnotationMetrics, CreateSession, EvaluationMetrics, Health, Job, MessageReply, MetricsQuery,
    MetricsView, PostMessage, SessionDetail, SessionList, SessionSummary, StateShare, StateView,
    TurnView,
};
use crate::error::ServiceError;
use crate::store::{IndexEvent, SessionRecord, SessionStatus, Store, StoredSession};

/// Mutable session state; held only by the request currently writing.
struct Writable {
    transcript: Transcript,
    writer: TranscriptWriter,
    closed: bool,
    /// Set when a write failed part-way; the session then refuses turns
    /// until the service is restarted and the file recovered.
    broken: Option<String>,
}

#[derive(Default)]
struct MetricsCache {
    annotation: Job<AnnotationMetrics>,
    evaluation: Job<EvaluationMetrics>,
}

struct Slot {
    record: RwLock<SessionRecord>,
    committed: RwLock<Arc<Transcript>>,
    writable: Arc<AsyncMutex<Writable>>,
    metrics: Mutex<MetricsCache>,
}

impl Slot {
    fn new(stored: StoredSession) -> Self {
        let closed = stored.record.status == SessionStatus::Closed;
        Slot {
            record: RwLock::new(stored.record),
            committed: RwLock::new(Arc::new(stored.transcript.clone())),
            writable: Arc::new(AsyncMutex::new(Writable {
                transcript: stored.transcript,
                writer: stored.writer,
                closed,
                broken: None,
            })),
            metrics: Mutex::new(MetricsCache::default()),
        }
    }

    fn record(&self) -> SessionRecord {
        self.record
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    fn committed(&self) -> Arc<Transcript> {
        self.committed
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    fn summary(&self) -> SessionSummary {
        SessionSummary {
            record: self.record(),
            turns: self.committed().len(),
        }
    }
}

/// Options for [`AppState::open`].
#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub default_variant: Variant,
    /// Parallelism for annotation and evaluation jobs.
    pub execution: Execution,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        Self {
            default_variant: Variant::Full,
            execution: Execution::default(),
        }
    }
}

struct Inner {
    engine: Arc<Engine>,
    store: Store,
    options: ServiceOptions,
    sessions: RwLock<BTreeMap<String, Arc<Slot>>>,
    next_id: AtomicU64,
}

/// Shared service state: the engine, the data directory and open sessions.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

fn id_number(id: &str) -> Option<u64> {
    id.strip_prefix('s')?.parse().ok()
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

impl AppState {
    /// Recovers every session under `data_dir`. Blocking.
    pub fn open(
        engine: Engine,
        data_dir: impl AsRef<std::path::Path>,
        options: ServiceOptions,
    ) -> Result<AppState, ServiceError> {
        let (store, stored) = Store::open(data_dir)?;
        let next = stored
            .iter()
            .filter_map(|s| id_number(&s.record.session_id))
            .max()
            .unwrap_or(0)
            + 1;
        let sessions = stored
            .into_iter()
            .map(|s| (s.record.session_id.clone(), Arc::new(Slot::new(s))))
            .collect();
        Ok(AppState(Arc::new(Inner {
            engine: Arc::new(engine),
            store,
            options,
            sessions: RwLock::new(sessions),
            next_id: AtomicU64::new(next),
        })))
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ServiceError> {
        self.0
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::SessionNotFound(id.to_string()))
    }

    pub fn session_count(&self) -> usize {
        self.0
            .sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .len()
    }

    pub async fn create_session(&self, req: CreateSession) -> Result<SessionSummary, ServiceError> {
        let variant = match req.variant.as_deref() {
            None => self.0.options.default_variant,
            Some(v) => v
                .parse()
                .map_err(|_| ServiceError::UnknownVariant(v.to_string()))?,
        };
        let id = format!("s{:06}", self.0.next_id.fetch_add(1, Ordering::SeqCst));
        let state = self.clone();
        let stored =
            blocking(move || state.0.store.create_session(id, variant, req.profile_ref)).await?;
        let slot = Arc::new(Slot::new(stored));
        let summary = slot.summary();
        self.0
            .sessions
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(summary.record.session_id.clone(), slot);
        Ok(summary)
    }

    pub fn list(&self) -> SessionList {
        let sessions = self.0.sessions.read().unwrap_or_else(|e| e.into_inner());
        SessionList {
            sessions: sessions.values().map(|s| s.summary()).collect(),
        }
    }

    pub fn detail(&self, id: &str) -> Result<SessionDetail, ServiceError> {
        let slot = self.slot(id)?;
        let committed = slot.committed();
        Ok(SessionDetail {
            session: SessionSummary {
                record: slot.record(),
                turns: committed.len(),
            },
            turns: committed.turns().iter().map(TurnView::from).collect(),
        })
    }

    /// Runs one turn. Turns of a session are taken in arrival order, and the
    /// turn is on disk before the reply is returned.
    pub async fn post_message(
        &self,
        id: &str,
        client_text: String,
    ) -> Result<MessageReply, ServiceError> {
        let slot = self.slot(id)?;
        if client_text.trim().is_empty() {
            return Err(ServiceError::EmptyMessage);
        }
        let mut guard = slot.writable.clone().lock_owned().await;
        let engine = self.0.engine.clone();
        let id = id.to_string();
        blocking(move || {
            let w = &mut *guard;
            if w.closed {
                return Err(ServiceError::SessionClosed(id));
            }
            if let Some(reason) = &w.broken {
                return Err(ServiceError::Storage(reason.clone()));
            }
            let result = engine.respond(&w.transcript, &client_text)?;
            let turn = result.into_turn(w.transcript.next_index(), &client_text);
            if let Err(e) = w.writer.append(&turn) {
                w.broken = Some(format!("append failed: {e}"));
                return Err(e.into());
            }
            w.transcript.push_turn(turn.clone())?;
            *slot.committed.write().unwrap_or_else(|e| e.into_inner()) =
                Arc::new(w.transcript.clone());
            Ok(MessageReply {
                session_id: id,
                turn: TurnView::from(&turn),
            })
        })
        .await
    }

    /// Closes a session; closing twice is not an error.
    pub async fn close(&self, id: &str) -> Result<SessionSummary, ServiceError> {
        let slot = self.slot(id)?;
        let mut guard = slot.writable.clone().lock_owned().await;
        let state = self.clone();
        let id = id.to_string();
        blocking(move || {
            if !guard.closed {
                state.0.store.record(&IndexEvent::Closed {
                    session_id: id,
                    at: Utc::now(),
                })?;
                guard.closed = true;
                slot.record
                    .write()
                    .unwrap_or_else(|e| e.into_inner())
                    .status = SessionStatus::Closed;
            }
            Ok(slot.summary())
        })
        .await
    }

    pub fn metrics(&self, id: &str, query: MetricsQuery) -> Result<MetricsView, ServiceError> {
        let slot = self.slot(id)?;
        let committed = slot.committed();
        let version = committed.len();
        let state_distribution = state_distribution(&committed)
            .map(|d| {
                d.into_iter()
                    .map(|(s, fraction)| {
                        let v = StateView::from(s);
                        StateShare {
                            stage: v.stage,
                            level: v.level,
                            badge: v.badge,
                            fraction,
                        }
                    })
                    .collect()
            })
            .unwrap_or_default();

        let mut cache = slot.metrics.lock().unwrap_or_else(|e| e.into_inner());
        if query.annotate && cache.annotation.version() != Some(version) {
            cache.annotation = Job::Running { version };
            self.spawn_annotation(slot.clone(), committed.clone());
        }
        if query.evaluate && cache.evaluation.version() != Some(version) {
            cache.evaluation = Job::Running { version };
            self.spawn_evaluation(slot.clone(), committed.clone());
        }
        let current = |v: Option<usize>| v == Some(version);
        Ok(MetricsView {
            session_id: id.to_string(),
            version,
            state_distribution,
            word_stats: word_stats(&committed),
            annotation: if current(cache.annotation.version()) {
                cache.annotation.clone()
            } else {
                Job::Idle
            },
            evaluation: if current(cache.evaluation.version()) {
                cache.evaluation.clone()
            } else {
                Job::Idle
            },
        })
    }

    fn spawn_annotation(&self, slot: Arc<Slot>, transcript: Arc<Transcript>) {
        let engine = self.0.engine.clone();
        let execution = self.0.options.execution;
        tokio::task::spawn_blocking(move || {
            let version = transcript.len();
            let outcome = annotate_transcript(
                &**engine.backend(),
                engine.prompts(),
                &transcript,
                execution,
            )
            .into_iter()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())
            .and_then(|anns| {
                let salience = salience_report(&transcript, &anns).map_err(|e| e.to_string())?;
                Ok(AnnotationMetrics {
                    salience,
                    trajectory: trajectory(&anns),
                })
            });
            let job = match outcome {
                Ok(result) => Job::Done { version, result },
                Err(error) => Job::Failed { version, error },
            };
            let mut cache = slot.metrics.lock().unwrap_or_else(|e| e.into_inner());
            if cache.annotation.version() == Some(version) {
                cache.annotation = job;
            }
        });
    }

    fn spawn_evaluation(&self, slot: Arc<Slot>, transcript: Arc<Transcript>) {
        let engine = self.0.engine.clone();
        let execution = self.0.options.execution;
        tokio::task::spawn_blocking(move || {
            let version = transcript.len();
            let outcome = evaluate_transcript(
                &**engine.backend(),
                engine.prompts(),
                &transcript,
                execution,
            )
            .into_iter()
            .collect::<Result<Vec<_>, _>>()
            .and_then(|scores| {
                let average = average_score(&scores)?;
                Ok(EvaluationMetrics { scores, average })
            });
            let job = match outcome {
                Ok(result) => Job::Done { version, result },
                Err(e) => Job::Failed {
                    version,
                    error: e.to_string(),
                },
            };
            let mut cache = slot.metrics.lock().unwrap_or_else(|e| e.into_inner());
            if cache.evaluation.version() == Some(version) {
                cache.evaluation = job;
            }
        });
    }
}

async fn create(
    State(app): State<AppState>,
    body: Option<Json<CreateSession>>,
) -> Result<Json<SessionSummary>, ServiceError> {
    Ok(Json(
        app.create_session(body.map(|b| b.0).unwrap_or_default())
            .await?,
    ))
}

async fn list(State(app): State<AppState>) -> Json<SessionList> {
    Json(app.list())
}

async fn detail(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionDetail>, ServiceError> {
    Ok(Json(app.detail(&id)?))
}

async fn message(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<PostMessage>, JsonRejection>,
) -> Result<Json<MessageReply>, ServiceError> {
    let Json(body) = body.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    Ok(Json(app.post_message(&id, body.client_text).await?))
}

async fn metrics(
    State(app): State<AppState>,
    Path(id): Path<String>,
    query: Result<Query<MetricsQuery>, QueryRejection>,
) -> Result<Json<MetricsView>, ServiceError> {
    let Query(query) = query.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    Ok(Json(app.metrics(&id, query)?))
}

async fn close(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionSummary>, ServiceError> {
    Ok(Json(app.close(&id).await?))
}

async fn health(State(app): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        sessions: app.session_count(),
    })
}

async fn not_found() -> ServiceError {
    ServiceError::BadRequest("no such route".into())
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(detail))
        .route("/sessions/{id}/messages", post(message))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/close", post(close))
        .route("/healthz", get(health))
        .fallback(not_found)
        .layer(CorsLayer::permissive())
        .with_state(app)
}
