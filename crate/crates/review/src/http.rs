use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::service::ReviewService;
use crate::ReviewError;

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        let status = match &self {
            ReviewError::NotFound(_) => StatusCode::NOT_FOUND,
            ReviewError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ReviewError::Gateway(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ReviewError> {
    payload.map(|Json(v)| v).map_err(|e| ReviewError::Validation(e.body_text()))
}

#[derive(Deserialize)]
struct RecodeBody {
    evidence: Vec<String>,
}

#[derive(Deserialize)]
struct CurrentBody {
    revision: usize,
}

type Shared = State<Arc<ReviewService>>;

async fn list(State(svc): Shared) -> Response {
    Json(svc.list()).into_response()
}

async fn show(State(svc): Shared, Path(id): Path<String>) -> Result<Response, ReviewError> {
    Ok(Json(svc.document(&id)?).into_response())
}

async fn run_predict(State(svc): Shared, Path(id): Path<String>) -> Result<Response, ReviewError> {
    Ok((StatusCode::CREATED, Json(svc.predict(&id).await?)).into_response())
}

async fn run_recode(
    State(svc): Shared,
    Path(id): Path<String>,
    payload: Result<Json<RecodeBody>, JsonRejection>,
) -> Result<Response, ReviewError> {
    // Unknown ids are 404 even when the body is also bad.
    svc.document(&id)?;
    let evidence = body(payload)?.evidence;
    Ok((StatusCode::CREATED, Json(svc.recode(&id, evidence).await?)).into_response())
}

async fn set_current(
    State(svc): Shared,
    Path(id): Path<String>,
    payload: Result<Json<CurrentBody>, JsonRejection>,
) -> Result<Response, ReviewError> {
    svc.document(&id)?;
    let revision = body(payload)?.revision;
    Ok(Json(svc.set_current(&id, revision).await?).into_response())
}

async fn report(State(svc): Shared) -> Result<Response, ReviewError> {
    Ok(Json(svc.report()?).into_response())
}

/// REST routes, plus the built UI under `/` when `static_dir` is given.
pub fn router(service: Arc<ReviewService>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/documents", get(list))
        .route("/documents/{id}", get(show))
        .route("/documents/{id}/predict", post(run_predict))
        .route("/documents/{id}/recode", post(run_recode))
        .route("/documents/{id}/current", put(set_current))
        .route("/report", get(report))
        .with_state(service);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, app: Router) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "review service listening");
    axum::serve(listener, app).await
}
