//! `/api/v1` routes.
//!
//! | method | path                         | body / query                 |
//! |--------|------------------------------|------------------------------|
//! | GET    | /runs                        |                              |
//! | POST   | /runs                        | config JSON (may be `{}`)    |
//! | GET    | /runs/{id}                   |                              |
//! | GET    | /runs/{id}/archive           | `max_cells`, `thumbnails`    |
//! | POST   | /runs/{id}/zoom              | `ZoomRequest`                |
//! | POST   | /runs/{id}/vae               | `VaeTrainRequest`            |
//! | POST   | /runs/{id}/walk              | `WalkRequest`                |
//! | POST   | /runs/{id}/validate          | `{"genome": [...]}` or `{"latent": [...]}` |
//!
//! POSTs carrying an `Idempotency-Key` header are answered once; retries
//! with the same key and path get the stored response.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{Mutex, Semaphore};

use crate::store::{parse_config, sha256_hex, Store};
use crate::validate::Violation;

use super::{ApiError, VaeTrainRequest, ValidateInput, WalkRequest, Workbench, ZoomRequest};

pub const DATA_DIR_ENV: &str = "FDA_DATA_DIR";
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
const VALIDATION_WORKERS: usize = 2;

pub struct AppState {
    pub bench: Arc<Workbench>,
    idempotency: Mutex<HashMap<String, (u16, Value)>>,
    validations: Semaphore,
    static_dir: Option<PathBuf>,
}

impl AppState {
    /// Opens the store, marks interrupted runs failed, and loads stored
    /// idempotent responses.
    pub fn new(store: Store, static_dir: Option<PathBuf>) -> Result<Arc<Self>, ApiError> {
        let bench = Workbench::new(store);
        bench.recover_stale()?;
        let mut replies = HashMap::new();
        if let Ok(entries) = std::fs::read_dir(idempotency_dir(&bench)) {
            for entry in entries.flatten() {
                let Ok(bytes) = std::fs::read(entry.path()) else {
                    continue;
                };
                if let Ok(stored) = serde_json::from_slice::<StoredReply>(&bytes) {
                    replies.insert(stored.key, (stored.status, stored.body));
                }
            }
        }
        Ok(Arc::new(Self {
            bench: Arc::new(bench),
            idempotency: Mutex::new(replies),
            validations: Semaphore::new(VALIDATION_WORKERS),
            static_dir,
        }))
    }
}

#[derive(Serialize, Deserialize)]
struct StoredReply {
    key: String,
    status: u16,
    body: Value,
}

fn idempotency_dir(bench: &Workbench) -> PathBuf {
    bench.store.root().join("idempotency")
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self {
            ApiError::Validation(_) => StatusCode::BAD_REQUEST,
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::NotReady(_) | ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::EmptyRegion => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(self.body())).into_response()
    }
}

type Reply = Result<(StatusCode, Value), ApiError>;

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    let text = if body.iter().all(u8::is_ascii_whitespace) {
        b"{}".as_slice()
    } else {
        body
    };
    serde_json::from_slice(text)
        .map_err(|e| ApiError::Validation(vec![Violation::new("body", e.to_string())]))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("response serializes")
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?
}

/// Runs `handler` once per idempotency key; without a key it always runs.
async fn idempotent<F, Fut>(
    state: &AppState,
    headers: &HeaderMap,
    uri: &Uri,
    handler: F,
) -> Response
where
    F: FnOnce() -> Fut,
    Fut: std::future::Future<Output = Reply>,
{
    let Some(key) = headers
        .get(IDEMPOTENCY_HEADER)
        .and_then(|v| v.to_str().ok())
    else {
        return reply(handler().await);
    };
    let scoped = format!("{} {}", uri.path(), key);
    let mut replies = state.idempotency.lock().await;
    if let Some((status, body)) = replies.get(&scoped) {
        let status = StatusCode::from_u16(*status).unwrap_or(StatusCode::OK);
        return (status, Json(body.clone())).into_response();
    }
    let (status, body) = match handler().await {
        Ok(ok) => ok,
        Err(e) => return e.into_response(),
    };
    let stored = StoredReply {
        key: scoped.clone(),
        status: status.as_u16(),
        body: body.clone(),
    };
    let dir = idempotency_dir(&state.bench);
    if std::fs::create_dir_all(&dir).is_ok() {
        let _ = std::fs::write(
            dir.join(format!("{}.json", sha256_hex(scoped.as_bytes()))),
            serde_json::to_vec(&stored).expect("reply serializes"),
        );
    }
    replies.insert(scoped, (status.as_u16(), body.clone()));
    (status, Json(body)).into_response()
}

fn reply(r: Reply) -> Response {
    match r {
        Ok((status, body)) => (status, Json(body)).into_response(),
        Err(e) => e.into_response(),
    }
}

fn spawn_run(bench: Arc<Workbench>, run_id: String) {
    tokio::task::spawn_blocking(move || {
        // Failures are recorded on the run itself.
        let _ = bench.execute_run(&run_id);
    });
}

async fn list_runs(State(state): State<Arc<AppState>>) -> Response {
    let bench = state.bench.clone();
    reply(
        blocking(move || bench.list())
            .await
            .map(|v| (StatusCode::OK, to_value(&v))),
    )
}

async fn create_run(
    State(state): State<Arc<AppState>>,
    headers: HeaderMap,
    uri: Uri,
    body: Bytes,
) -> Response {
    idempotent(&state, &headers, &uri, || async {
        let text = std::str::from_utf8(&body)
            .map_err(|e| ApiError::Validation(vec![Violation::new("body", e.to_string())]))?;
        let text = if text.trim().is_empty() { "{}" } else { text };
        let config = parse_config(text)?;
        let record = state.bench.create_run(config)?;
        spawn_run(state.bench.clone(), record.run_id.clone());
        Ok((
            StatusCode::ACCEPTED,
            json!({"run_id": record.run_id, "status": record.status}),
        ))
    })
    .await
}

async fn run_status(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    let bench = state.bench.clone();
    reply(
        blocking(move || bench.status(&id))
            .await
            .map(|v| (StatusCode::OK, to_value(&v))),
    )
}

#[derive(Deserialize)]
struct ArchiveQuery {
    max_cells: Option<usize>,
    thumbnails: Option<bool>,
}

async fn run_archive(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ArchiveQuery>,
) -> Response {
    let bench = state.bench.clone();
    reply(
        blocking(move || bench.archive_view(&id, q.max_cells, q.thumbnails.unwrap_or(true)))
            .await
            .map(|v| (StatusCode::OK, to_value(&v))),
    )
}

async fn zoom(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    uri: Uri,
    body: Bytes,
) -> Response {
    idempotent(&state, &headers, &uri, || async {
        let request: ZoomRequest = parse_body(&body)?;
        let bench = state.bench.clone();
        let record = blocking(move || bench.zoom(&id, &request)).await?;
        spawn_run(state.bench.clone(), record.run_id.clone());
        Ok((
            StatusCode::ACCEPTED,
            json!({"run_id": record.run_id, "status": record.status, "lineage": record.lineage}),
        ))
    })
    .await
}

async fn train(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    uri: Uri,
    body: Bytes,
) -> Response {
    idempotent(&state, &headers, &uri, || async {
        let request: VaeTrainRequest = parse_body(&body)?;
        let bench = state.bench.clone();
        let summary = blocking(move || bench.train_vae(&id, &request, &mut |_| {})).await?;
        Ok((StatusCode::OK, to_value(&summary)))
    })
    .await
}

async fn walk(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    uri: Uri,
    body: Bytes,
) -> Response {
    idempotent(&state, &headers, &uri, || async {
        let request: WalkRequest = parse_body(&body)?;
        let bench = state.bench.clone();
        let view = blocking(move || bench.walk(&id, &request)).await?;
        Ok((StatusCode::OK, to_value(&view)))
    })
    .await
}

async fn validate(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    uri: Uri,
    body: Bytes,
) -> Response {
    idempotent(&state, &headers, &uri, || async {
        let input: ValidateInput = parse_body(&body)?;
        let _permit = state
            .validations
            .acquire()
            .await
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        let bench = state.bench.clone();
        let report = blocking(move || bench.validate(&id, &input)).await?;
        Ok((StatusCode::OK, to_value(&report)))
    })
    .await
}

async fn static_file(State(state): State<Arc<AppState>>, uri: Uri) -> Response {
    let not_found = || ApiError::NotFound(uri.path().to_string()).into_response();
    let Some(root) = &state.static_dir else {
        return not_found();
    };
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    if rel
        .split('/')
        .any(|p| p.is_empty() || p == "." || p == "..")
    {
        return not_found();
    }
    match tokio::fs::read(root.join(rel)).await {
        Ok(bytes) => {
            let mime = match rel.rsplit('.').next() {
                Some("html") => "text/html; charset=utf-8",
                Some("js") => "text/javascript",
                Some("css") => "text/css",
                Some("json") => "application/json",
                Some("svg") => "image/svg+xml",
                _ => "application/octet-stream",
            };
            ([(axum::http::header::CONTENT_TYPE, mime)], bytes).into_response()
        }
        Err(_) => not_found(),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/runs", get(list_runs).post(create_run))
        .route("/runs/{id}", get(run_status))
        .route("/runs/{id}/archive", get(run_archive))
        .route("/runs/{id}/zoom", post(zoom))
        .route("/runs/{id}/vae", post(train))
        .route("/runs/{id}/walk", post(walk))
        .route("/runs/{id}/validate", post(validate));
    Router::new()
        .nest("/api/v1", api)
        .fallback(static_file)
        .with_state(state)
}

/// Serves the API (and optional static assets) until the process stops.
pub async fn serve(addr: std::net::SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
