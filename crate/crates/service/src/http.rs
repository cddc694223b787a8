//! HTTP routes over a [`Manager`].

use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use duelzero_core::engine::Action;
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::session::{Manager, ServiceError, SessionSettings};
use crate::view::{Envelope, SCHEMA_VERSION};

type Shared = Arc<Manager>;

pub struct ApiError(pub ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let e = &self.0;
        let status = match e {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::UnknownCheckpoint(_) | ServiceError::Schema(_) | ServiceError::BadRequest(_) => {
                StatusCode::BAD_REQUEST
            }
            ServiceError::Illegal { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Search(_) | ServiceError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::CONFLICT,
        };
        let mut body = json!({ "error": { "code": e.code(), "message": e.to_string() } });
        if let ServiceError::Illegal { reason, .. } = e {
            body["error"]["reason"] = json!(reason);
        }
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Deserialize)]
struct SeatQuery {
    seat: Option<u8>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SubmitBody {
    seat: u8,
    action: Action,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnalysisBody {
    seat: u8,
    budget: u32,
}

#[derive(Deserialize)]
struct EventsQuery {
    after: Option<u64>,
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(ServiceError::Storage(format!("worker failed: {e}"))))?
        .map_err(ApiError)
}

async fn checkpoints(State(m): State<Shared>) -> Json<serde_json::Value> {
    Json(json!({ "schema_version": SCHEMA_VERSION, "checkpoints": m.checkpoints() }))
}

async fn create(State(m): State<Shared>, body: Option<Json<SessionSettings>>) -> ApiResult<Response> {
    let settings = body.map(|Json(s)| s).unwrap_or_default();
    let created = blocking(move || m.create(settings)).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn state(State(m): State<Shared>, Path(id): Path<String>, Query(q): Query<SeatQuery>) -> ApiResult<Response> {
    Ok(Json(m.view(&id, q.seat)?).into_response())
}

async fn legal(State(m): State<Shared>, Path(id): Path<String>, Query(q): Query<SeatQuery>) -> ApiResult<Response> {
    Ok(Json(m.legal(&id, q.seat)?).into_response())
}

async fn submit(State(m): State<Shared>, Path(id): Path<String>, Json(b): Json<SubmitBody>) -> ApiResult<Response> {
    Ok(Json(blocking(move || m.submit(&id, b.seat, b.action)).await?).into_response())
}

async fn engine_move(State(m): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(blocking(move || m.engine_move(&id)).await?).into_response())
}

async fn analysis(State(m): State<Shared>, Path(id): Path<String>, Json(b): Json<AnalysisBody>) -> ApiResult<Response> {
    let (summary, hit) = blocking(move || m.analysis(&id, b.seat, b.budget)).await?;
    let mut r = Json(summary).into_response();
    r.headers_mut().insert("x-cache", HeaderValue::from_static(if hit { "hit" } else { "miss" }));
    Ok(r)
}

async fn transcript(State(m): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let record = m.transcript(&id)?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], record.to_jsonl()).into_response())
}

fn sse_event(e: &Envelope) -> SseEvent {
    let data = serde_json::to_string(&e.message).expect("notifications serialize");
    let ev = SseEvent::default().event(e.message.kind()).data(data);
    match e.id {
        Some(id) => ev.id(id.to_string()),
        None => ev,
    }
}

async fn events(
    State(m): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>> {
    let last = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse().ok())
        .or(q.after);
    let (backlog, rx) = m.subscribe(&id, last)?;
    let seen = backlog.last().and_then(|e| e.id).or(last).unwrap_or(0);
    let live = stream::unfold((rx, seen), |(mut rx, seen)| async move {
        loop {
            match rx.recv().await {
                // Already sent from the backlog.
                Ok(e) if e.id.is_some_and(|i| i <= seen) => continue,
                Ok(e) => {
                    let seen = e.id.unwrap_or(seen);
                    return Some((e, (rx, seen)));
                }
                Err(RecvError::Lagged(n)) => tracing::warn!("event stream lagged by {n}"),
                Err(RecvError::Closed) => return None,
            }
        }
    });
    let all = stream::iter(backlog).chain(live).map(|e| Ok(sse_event(&e)));
    Ok(Sse::new(all).keep_alive(KeepAlive::default()))
}

pub fn router(manager: Arc<Manager>) -> Router {
    Router::new()
        .route("/v1/checkpoints", get(checkpoints))
        .route("/v1/sessions", post(create))
        .route("/v1/sessions/{id}/state", get(state))
        .route("/v1/sessions/{id}/legal", get(legal))
        .route("/v1/sessions/{id}/actions", post(submit))
        .route("/v1/sessions/{id}/engine-move", post(engine_move))
        .route("/v1/sessions/{id}/analysis", post(analysis))
        .route("/v1/sessions/{id}/transcript", get(transcript))
        .route("/v1/sessions/{id}/events", get(events))
        .with_state(manager)
}

/// Serve until the process is stopped.
pub async fn serve(addr: SocketAddr, manager: Arc<Manager>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(manager)).await
}
