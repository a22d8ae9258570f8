use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;

use crate::api::ReloadRequest;
use crate::error::ServeError;
use crate::service::Service;

impl IntoResponse for ServeError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServeError::InvalidRequest(_) | ServeError::Core(_) => StatusCode::BAD_REQUEST,
            ServeError::UnknownUser(_) => StatusCode::NOT_FOUND,
            ServeError::Rejected(_) | ServeError::Io { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

fn join_error(e: tokio::task::JoinError) -> Response {
    (
        StatusCode::INTERNAL_SERVER_ERROR,
        Json(serde_json::json!({ "error": e.to_string() })),
    )
        .into_response()
}

async fn recommend(State(svc): State<Arc<Service>>, body: Bytes) -> Response {
    match tokio::task::spawn_blocking(move || svc.recommend_json(&body)).await {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => join_error(e),
    }
}

async fn reload(State(svc): State<Arc<Service>>, body: Bytes) -> Response {
    let req: ReloadRequest = if body.iter().all(u8::is_ascii_whitespace) {
        ReloadRequest::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(r) => r,
            Err(e) => return ServeError::InvalidRequest(e.to_string()).into_response(),
        }
    };
    match tokio::task::spawn_blocking(move || svc.reload(&req)).await {
        Ok(Ok(report)) => Json(report).into_response(),
        Ok(Err(e)) => e.into_response(),
        Err(e) => join_error(e),
    }
}

async fn healthz(State(svc): State<Arc<Service>>) -> Response {
    Json(svc.healthz()).into_response()
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/v1/recommend", post(recommend))
        .route("/v1/reload", post(reload))
        .route("/healthz", get(healthz))
        .with_state(service)
}

/// Serves until ctrl-c.
pub async fn serve(listener: TcpListener, service: Arc<Service>) -> std::io::Result<()> {
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
