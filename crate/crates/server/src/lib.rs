//! HTTP API over a shared workspace. Message turns stream progress as server-sent
//! events; everything else is plain JSON.

mod openapi;

use std::cell::{Cell, RefCell};
use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::{Body, Bytes};
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::Deserialize;
use serde_json::{json, Value as Json_};
use tokio::sync::mpsc;

use provfig::bundle::figure_files;
use provfig::session::{
    run_turn, Emitter, EventKind, MessageReply, MessageRequest, SessionConfig, SessionError, StreamEvent, Workspace,
};
use provfig::{Gesture, InteractionEvent};

pub use openapi::{openapi, ROUTES};

#[derive(Clone)]
pub struct AppState {
    ws: Arc<Mutex<Workspace>>,
    in_flight: Arc<Mutex<BTreeSet<String>>>,
    data_dir: Option<PathBuf>,
    /// Capacity of the queue between a running loop and its event stream.
    queue: usize,
    /// Backend for sessions created without one.
    default_backend: Option<String>,
}

impl AppState {
    pub fn new(ws: Workspace) -> Self {
        Self {
            ws: Arc::new(Mutex::new(ws)),
            in_flight: Arc::default(),
            data_dir: None,
            queue: 64,
            default_backend: None,
        }
    }

    /// Saves the workspace under `dir` after every change.
    pub fn with_data_dir(mut self, dir: PathBuf) -> Self {
        self.data_dir = Some(dir);
        self
    }

    pub fn with_default_backend(mut self, name: impl Into<String>) -> Self {
        self.default_backend = Some(name.into());
        self
    }

    pub fn with_queue(mut self, capacity: usize) -> Self {
        self.queue = capacity.max(1);
        self
    }

    pub fn workspace(&self) -> MutexGuard<'_, Workspace> {
        self.ws.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn busy_sessions(&self) -> Vec<String> {
        self.in_flight.lock().unwrap_or_else(|p| p.into_inner()).iter().cloned().collect()
    }

    fn persist(&self, ws: &Workspace) {
        if let Some(dir) = &self.data_dir {
            if let Err(e) = ws.save(dir) {
                tracing::warn!("saving workspace: {e}");
            }
        }
    }
}

pub struct ApiError(SessionError);

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        Self(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self(SessionError::BadRequest(e.body_text()))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = json!({ "error": { "status": status.as_u16(), "message": self.0.to_string() } });
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/openapi.json", get(|| async { Json(openapi()) }))
        .route("/api/v1/sessions", post(create_session))
        .route("/api/v1/sessions/{id}", get(get_session))
        .route("/api/v1/sessions/{id}/messages", post(post_message))
        .route("/api/v1/figures/{id}/gestures", post(post_gesture))
        .route("/api/v1/figures/{id}/bundle", get(figure_bundle))
        .route("/api/v1/artifacts/{id}/versions", get(versions))
        .route("/api/v1/artifacts/{id}/replay", post(replay))
        .route("/api/v1/artifacts/{id}/export", get(export))
        .route("/api/v1/artifacts/import", post(import))
        .fallback(|| async { ApiError(SessionError::NotFound("no such route".into())) })
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Json_>)> {
    let mut v: Json_ = if body.iter().all(u8::is_ascii_whitespace) {
        json!({})
    } else {
        serde_json::from_slice(&body).map_err(|e| SessionError::BadRequest(e.to_string()))?
    };
    if let (Some(obj), Some(b)) = (v.as_object_mut(), &app.default_backend) {
        obj.entry("backend").or_insert_with(|| b.clone().into());
    }
    let config: SessionConfig = serde_json::from_value(v).map_err(|e| SessionError::BadRequest(e.to_string()))?;
    let mut ws = app.workspace();
    let id = ws.create_session(config)?;
    let info = ws.session_info(&id)?;
    app.persist(&ws);
    Ok((StatusCode::CREATED, Json(serde_json::to_value(info).expect("json"))))
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Json_>> {
    let info = app.workspace().session_info(&id)?;
    Ok(Json(serde_json::to_value(info).expect("json")))
}

#[derive(Deserialize)]
struct StreamQuery {
    #[serde(default = "yes")]
    stream: bool,
}

fn yes() -> bool {
    true
}

/// Releases the session when the turn ends, however it ends.
struct InFlight {
    set: Arc<Mutex<BTreeSet<String>>>,
    id: String,
}

impl Drop for InFlight {
    fn drop(&mut self) {
        self.set.lock().unwrap_or_else(|p| p.into_inner()).remove(&self.id);
    }
}

fn links(figure_ids: &[String]) -> Json_ {
    figure_ids
        .iter()
        .map(|f| {
            (
                f.clone(),
                json!({
                    "bundle": format!("/api/v1/figures/{f}/bundle"),
                    "data": format!("/api/v1/figures/{f}/bundle?file=data.csv"),
                    "query": format!("/api/v1/figures/{f}/bundle?file=query.sql"),
                    "program": format!("/api/v1/figures/{f}/bundle?file=program.json"),
                }),
            )
        })
        .collect::<serde_json::Map<_, _>>()
        .into()
}

fn event_json(e: &StreamEvent) -> Json_ {
    let mut v = serde_json::to_value(e).expect("json");
    if let EventKind::Done { figure_ids, .. } = &e.kind {
        v["links"] = links(figure_ids);
    }
    v
}

/// Runs the loop off the async runtime. Events go through a bounded queue; if the
/// receiver disappears mid-loop the turn is abandoned and nothing is committed.
fn spawn_turn(
    app: AppState,
    id: String,
    req: MessageRequest,
) -> ApiResult<(mpsc::Receiver<StreamEvent>, tokio::task::JoinHandle<Option<MessageReply>>)> {
    let turn = {
        let ws = app.workspace();
        let turn = ws.prepare_message(&id, req)?;
        let mut busy = app.in_flight.lock().unwrap_or_else(|p| p.into_inner());
        if !busy.insert(id.clone()) {
            return Err(SessionError::Conflict(format!("session {id} already has a turn in flight")).into());
        }
        turn
    };
    let guard = InFlight {
        set: app.in_flight.clone(),
        id,
    };
    let (tx, rx) = mpsc::channel(app.queue);
    let handle = tokio::task::spawn_blocking(move || {
        let _guard = guard;
        let gone = Cell::new(false);
        let held: RefCell<Option<Vec<StreamEvent>>> = RefCell::new(None);
        let mut sink = |e: StreamEvent| match held.borrow_mut().as_mut() {
            Some(buf) => buf.push(e),
            None => gone.set(gone.get() || tx.blocking_send(e).is_err()),
        };
        let mut em = Emitter::new(&mut sink);
        let result = run_turn(&turn, &mut em);
        if gone.get() {
            tracing::info!("turn for {} abandoned by its client", turn.session_id);
            return None;
        }
        // Closing events are held while the workspace is locked.
        *held.borrow_mut() = Some(Vec::new());
        let reply = {
            let mut ws = app.workspace();
            let r = ws.finish_message(turn, result, &mut em);
            app.persist(&ws);
            r
        };
        drop(em);
        let tail = held.take().unwrap_or_default();
        for e in tail {
            let _ = tx.blocking_send(e);
        }
        reply.map_err(|e| tracing::error!("finishing turn: {e}")).ok()
    });
    Ok((rx, handle))
}

async fn post_message(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<StreamQuery>,
    body: Result<Json<MessageRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    let (mut rx, handle) = spawn_turn(app, id, req)?;
    if q.stream {
        let stream = futures::stream::unfold(rx, |mut rx| async move {
            let e = rx.recv().await?;
            let ev = Event::default()
                .event(e.kind.name())
                .id(e.seq.to_string())
                .json_data(event_json(&e))
                .expect("json");
            Some((Ok::<_, std::convert::Infallible>(ev), rx))
        });
        return Ok(Sse::new(stream).keep_alive(KeepAlive::default()).into_response());
    }
    let mut events = Vec::new();
    while let Some(e) = rx.recv().await {
        events.push(event_json(&e));
    }
    let reply = handle
        .await
        .map_err(|e| SessionError::Internal(e.to_string()))?
        .ok_or_else(|| SessionError::Internal("turn was not applied".into()))?;
    let links = links(&reply.figure_ids);
    Ok(Json(json!({ "events": events, "reply": reply, "links": links })).into_response())
}

#[derive(Deserialize)]
struct GestureRequest {
    #[serde(flatten)]
    gesture: Gesture,
    #[serde(default)]
    at: Option<DateTime<Utc>>,
}

async fn post_gesture(
    State(app): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<GestureRequest>, JsonRejection>,
) -> ApiResult<Json<Json_>> {
    let Json(req) = body?;
    let mut ws = app.workspace();
    let ev = InteractionEvent {
        figure_id: id,
        gesture: req.gesture,
        at: req.at.unwrap_or_else(|| ws.now()),
    };
    let reply = ws.post_gesture(ev)?;
    if reply.version_id.is_some() {
        app.persist(&ws);
    }
    Ok(Json(serde_json::to_value(reply).expect("json")))
}

#[derive(Deserialize)]
struct FileQuery {
    file: Option<String>,
}

async fn figure_bundle(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<FileQuery>,
) -> ApiResult<Response> {
    let files = {
        let ws = app.workspace();
        let state = ws
            .locate_figure(&id)
            .ok_or_else(|| SessionError::NotFound(format!("figure {id}")))?;
        figure_files(state.figure(&id).expect("located"))
    };
    let Some(name) = q.file else {
        return Ok(Json(json!({ "figure_id": id, "files": files })).into_response());
    };
    let body = files
        .get(name.as_str())
        .cloned()
        .ok_or_else(|| SessionError::NotFound(format!("file {name}")))?;
    let kind = match name.rsplit('.').next() {
        Some("csv") => "text/csv",
        Some("sql") => "text/plain; charset=utf-8",
        _ => "application/json",
    };
    Ok(([(header::CONTENT_TYPE, kind)], body).into_response())
}

async fn versions(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Json_>> {
    let ws = app.workspace();
    let ledger = &ws.history.ledger;
    let head = ledger
        .head(&id)
        .ok_or_else(|| SessionError::NotFound(format!("artifact {id}")))?;
    let list: Vec<Json_> = ledger
        .versions_of(&id)
        .into_iter()
        .map(|v| {
            let ops: Vec<Json_> = v
                .state
                .figure_ids
                .iter()
                .map(|f| {
                    let m = &v.state.figures[f].meta;
                    json!({ "figure_id": f, "version_id": m.version_id, "operation": m.operation })
                })
                .collect();
            json!({
                "version_id": v.version_id,
                "parents": v.parents,
                "committed_at": v.committed_at,
                "trigger": v.trigger,
                "figures": ops,
                "schemas": v.state.schemas.len(),
                "head": v.version_id == head,
            })
        })
        .collect();
    Ok(Json(json!({ "artifact_id": id, "head_version": head, "versions": list })))
}

#[derive(Deserialize)]
struct ReplayRequest {
    version_id: Option<String>,
}

async fn replay(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Json_>> {
    let req: ReplayRequest = if body.iter().all(u8::is_ascii_whitespace) {
        ReplayRequest { version_id: None }
    } else {
        serde_json::from_slice(&body).map_err(|e| SessionError::BadRequest(e.to_string()))?
    };
    let ws = app.workspace();
    let ledger = &ws.history.ledger;
    let head = ledger
        .head(&id)
        .ok_or_else(|| SessionError::NotFound(format!("artifact {id}")))?
        .to_string();
    let version = req.version_id.unwrap_or(head);
    match ledger.versions.get(&version) {
        Some(v) if v.artifact_id == id => {}
        _ => return Err(SessionError::NotFound(format!("version {version} of {id}")).into()),
    }
    let report = ws.replay(&version)?;
    let ok = report.ok();
    Ok(Json(json!({ "ok": ok, "report": report })))
}

async fn export(State(app): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let bytes = app.workspace().export(&id)?;
    let disposition = format!("attachment; filename=\"{id}.zip\"");
    Ok((
        [(header::CONTENT_TYPE, "application/zip".to_string()), (header::CONTENT_DISPOSITION, disposition)],
        Body::from(bytes),
    )
        .into_response())
}

async fn import(State(app): State<AppState>, body: Bytes) -> ApiResult<Json<Json_>> {
    if body.is_empty() {
        return Err(SessionError::BadRequest("empty body; send the bundle zip".into()).into());
    }
    let mut ws = app.workspace();
    let summary = ws.import(&body)?;
    app.persist(&ws);
    Ok(Json(serde_json::to_value(summary).expect("json")))
}
