use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};
use tower_http::services::ServeDir;

use super::session::{ActionRequest, CreateSession, SessionManager};
use super::ServiceError;

pub type Shared = Arc<Mutex<SessionManager>>;

/// Error body: `{"error": {"code": "...", "message": "..."}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            log::error!("{self}");
        }
        let body = ErrorBody { error: ErrorDetail { code: self.code().to_string(), message: self.to_string() } };
        (status, Json(body)).into_response()
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    payload.map(|Json(v)| v).map_err(|e| ServiceError::InvalidRequest(e.body_text()))
}

/// Runs `f` on the manager off the async executor; materializing an
/// optimal-nudge trial can take a moment.
async fn with_manager<T: Send + 'static>(
    shared: Shared,
    f: impl FnOnce(&mut SessionManager) -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(move || {
        let mut guard = shared.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard)
    })
    .await
    .expect("session task panicked")
}

async fn create(
    State(shared): State<Shared>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<Response, ServiceError> {
    let request = body(payload)?;
    let created = with_manager(shared, move |m| m.create(request)).await?;
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn state(State(shared): State<Shared>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let view = with_manager(shared, move |m| m.state(&id)).await?;
    Ok(Json(view).into_response())
}

async fn act(
    State(shared): State<Shared>,
    Path(id): Path<String>,
    payload: Result<Json<ActionRequest>, JsonRejection>,
) -> Result<Response, ServiceError> {
    let request = body(payload)?;
    let response = with_manager(shared, move |m| m.act(&id, request)).await?;
    Ok(Json(response).into_response())
}

async fn result(State(shared): State<Shared>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let summary = with_manager(shared, move |m| m.result(&id)).await?;
    Ok(Json(summary).into_response())
}

/// The API routes, with CORS open to any origin so a separately served UI
/// can call them. Static files (a built UI) are served from `static_dir`
/// for any other path.
pub fn router(manager: SessionManager, static_dir: Option<PathBuf>) -> Router {
    let cors = CorsLayer::new().allow_origin(Any).allow_methods([Method::GET, Method::POST]).allow_headers(Any);
    let app = Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/sessions", post(create))
        .route("/sessions/{id}/state", get(state))
        .route("/sessions/{id}/actions", post(act))
        .route("/sessions/{id}/result", get(result))
        .with_state(Arc::new(Mutex::new(manager)));
    let app = match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    };
    app.layer(cors)
}

pub async fn serve(addr: SocketAddr, manager: SessionManager, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("serving on http://{}", listener.local_addr()?);
    axum::serve(listener, router(manager, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
