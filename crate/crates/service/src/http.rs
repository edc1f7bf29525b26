//! Axum routes over [`Service`]. Work runs on the blocking pool because
//! fits and rollouts are CPU bound.

use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use uuid::Uuid;

use crate::engine::{LabelRequest, Service};
use crate::error::ServiceError;
use crate::session::CreateRequest;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, code) = match &self {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServiceError::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            ServiceError::PreconditionFailed(_) => (StatusCode::PRECONDITION_FAILED, "precondition_failed"),
            ServiceError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ServiceError::Exhausted(_) => (StatusCode::CONFLICT, "query_exhausted"),
            ServiceError::CorruptLog(_) | ServiceError::Core(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        let mut body = json!({ "error": code, "message": self.to_string() });
        if matches!(self, ServiceError::Exhausted(_)) {
            body["advice"] = json!("finalize");
        }
        (status, Json(body)).into_response()
    }
}

type AppState = Arc<Service>;

fn parse_id(id: &str) -> Result<Uuid, ServiceError> {
    Uuid::parse_str(id).map_err(|_| ServiceError::NotFound(id.to_string()))
}

async fn blocking<T, F>(svc: AppState, f: F) -> Result<Json<T>, ServiceError>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ServiceError::Core(mopref_core::Error::InvalidState(format!("worker panicked: {e}"))))?
        .map(Json)
}

async fn create(State(svc): State<AppState>, Json(req): Json<CreateRequest>) -> Result<Response, ServiceError> {
    let created = blocking(svc, move |s| s.create(req)).await?;
    Ok((StatusCode::CREATED, created).into_response())
}

async fn query(State(svc): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    let id = parse_id(&id)?;
    let view = blocking(svc, move |s| s.query(id)).await?;
    Ok(Json(view.0.as_ref()).into_response())
}

async fn label(
    State(svc): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<LabelRequest>,
) -> Result<Response, ServiceError> {
    let id = parse_id(&id)?;
    Ok(blocking(svc, move |s| s.label(id, req)).await?.into_response())
}

async fn estimate(State(svc): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    let id = parse_id(&id)?;
    Ok(blocking(svc, move |s| s.estimate(id)).await?.into_response())
}

async fn finalize(State(svc): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    let id = parse_id(&id)?;
    Ok(blocking(svc, move |s| s.finalize(id)).await?.into_response())
}

async fn abort(State(svc): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    let id = parse_id(&id)?;
    let _ = blocking(svc, move |s| s.abort(id)).await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn export(State(svc): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ServiceError> {
    let id = parse_id(&id)?;
    Ok(blocking(svc, move |s| s.export(id)).await?.into_response())
}

async fn list(State(svc): State<AppState>) -> Json<Vec<Uuid>> {
    Json(svc.session_ids())
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript; charset=utf-8",
        "css" => "text/css; charset=utf-8",
        "json" | "map" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "ico" => "image/x-icon",
        "woff2" => "font/woff2",
        "txt" => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

/// Resolves a URL path inside `root`, refusing anything that climbs out.
fn static_path(root: &Path, uri: &Uri) -> Option<PathBuf> {
    let rel = uri.path().trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = Path::new(rel);
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return None;
    }
    Some(root.join(rel))
}

async fn static_file(State(svc): State<AppState>, uri: Uri) -> Response {
    let Some(root) = svc.config().static_dir.clone() else {
        return ServiceError::NotFound(uri.path().to_string()).into_response();
    };
    let Some(mut path) = static_path(&root, &uri) else {
        return ServiceError::NotFound(uri.path().to_string()).into_response();
    };
    if path.is_dir() {
        path = path.join("index.html");
    }
    match tokio::fs::read(&path).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response(),
        Err(_) => ServiceError::NotFound(uri.path().to_string()).into_response(),
    }
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}/query", get(query))
        .route("/sessions/{id}/label", post(label))
        .route("/sessions/{id}/estimate", get(estimate))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/sessions/{id}/abort", post(abort))
        .route("/sessions/{id}/export", get(export))
        .fallback(get(static_file))
        .with_state(service)
}

/// Serves until ctrl-c.
pub async fn serve(service: Arc<Service>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
