use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use plkg_core::annotation::parse_error_report;
use plkg_core::features::suggest_labels;
use plkg_core::{Annotation, FeatureVector, ValidationReport};
use serde::Serialize;
use tokio::net::TcpListener;

use crate::workspace::{StoreError, Workspace};

type Shared = Arc<Workspace>;

fn json_body(status: StatusCode, mut body: String) -> Response {
    body.push('\n');
    (status, [(header::CONTENT_TYPE, "application/json; charset=utf-8")], body).into_response()
}

fn json<T: Serialize>(status: StatusCode, value: &T) -> Response {
    json_body(status, serde_json::to_string(value).expect("response serializes"))
}

fn error(status: StatusCode, msg: impl ToString) -> Response {
    json(status, &serde_json::json!({ "error": msg.to_string() }))
}

fn report(status: StatusCode, report: &ValidationReport) -> Response {
    json_body(status, report.to_json())
}

impl IntoResponse for StoreError {
    fn into_response(self) -> Response {
        match &self {
            StoreError::ValidationFailed(r) => report(StatusCode::UNPROCESSABLE_ENTITY, r),
            StoreError::Conflict { .. } => error(StatusCode::CONFLICT, self),
            StoreError::NotFound(_) => error(StatusCode::NOT_FOUND, self),
            StoreError::Feature(_) | StoreError::Sidecar(..) | StoreError::Agreement(_) => {
                error(StatusCode::UNPROCESSABLE_ENTITY, self)
            }
            _ => {
                log::error!("{self}");
                error(StatusCode::INTERNAL_SERVER_ERROR, self)
            }
        }
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, StoreError> + Send + 'static,
) -> Result<T, StoreError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| StoreError::Io(std::io::Error::other(e)))?
}

async fn schema(State(ws): State<Shared>) -> Response {
    ([(header::CONTENT_TYPE, "application/json; charset=utf-8")], ws.schema_bytes().to_vec()).into_response()
}

async fn list_annotations(State(ws): State<Shared>) -> Response {
    json(StatusCode::OK, &ws.summaries())
}

async fn post_annotation(State(ws): State<Shared>, body: Bytes) -> Result<Response, StoreError> {
    let ann = match Annotation::from_json(&body) {
        Ok(a) => a,
        Err(e) => return Ok(report(StatusCode::UNPROCESSABLE_ENTITY, &parse_error_report(&e))),
    };
    let id = ann.id.clone();
    let revision = blocking(move || ws.put_annotation_checked(&ann)).await?;
    Ok(json(StatusCode::CREATED, &serde_json::json!({ "id": id, "revision": revision })))
}

async fn get_annotation(State(ws): State<Shared>, Path(id): Path<String>) -> Result<Response, StoreError> {
    let ann = ws.get(&id).ok_or_else(|| StoreError::NotFound(format!("annotation `{id}`")))?;
    Ok(json(StatusCode::OK, &ann))
}

async fn validate_annotation(
    State(ws): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, StoreError> {
    let ann = if body.iter().all(u8::is_ascii_whitespace) {
        ws.get(&id).ok_or_else(|| StoreError::NotFound(format!("annotation `{id}`")))?
    } else {
        match Annotation::from_json(&body) {
            Ok(a) => a,
            Err(e) => return Ok(report(StatusCode::UNPROCESSABLE_ENTITY, &parse_error_report(&e))),
        }
    };
    Ok(report(StatusCode::OK, &ws.validate(&ann)))
}

async fn list_images(State(ws): State<Shared>) -> Result<Response, StoreError> {
    Ok(json(StatusCode::OK, &ws.images()?))
}

async fn get_image(State(ws): State<Shared>, Path(name): Path<String>) -> Result<Response, StoreError> {
    let bytes = blocking(move || ws.image_bytes(&name)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn get_features(State(ws): State<Shared>, Path(name): Path<String>) -> Result<Response, StoreError> {
    let bytes = blocking(move || ws.features_json(&name)).await?;
    Ok(([(header::CONTENT_TYPE, "application/json; charset=utf-8")], bytes).into_response())
}

async fn agreement(
    State(ws): State<Shared>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Response, StoreError> {
    let (Some(a), Some(b)) = (params.get("a").cloned(), params.get("b").cloned()) else {
        return Ok(error(StatusCode::UNPROCESSABLE_ENTITY, "query parameters `a` and `b` name two annotators"));
    };
    let result = blocking(move || ws.agreement(&a, &b)).await?;
    Ok(json_body(StatusCode::OK, result.to_json()))
}

async fn suggest(State(ws): State<Shared>, body: Bytes) -> Response {
    match serde_json::from_slice::<FeatureVector>(&body) {
        Ok(fv) => json(StatusCode::OK, &suggest_labels(ws.schema(), &fv)),
        Err(e) => error(StatusCode::UNPROCESSABLE_ENTITY, format!("malformed feature vector: {e}")),
    }
}

pub fn router(ws: Arc<Workspace>) -> Router {
    Router::new()
        .route("/schema", get(schema))
        .route("/annotations", get(list_annotations).post(post_annotation))
        .route("/annotations/{id}", get(get_annotation))
        .route("/annotations/{id}/validate", post(validate_annotation))
        .route("/images", get(list_images))
        .route("/images/{name}", get(get_image))
        .route("/features/{name}", get(get_features))
        .route("/agreement", get(agreement))
        .route("/suggest", post(suggest))
        .fallback(|| async { error(StatusCode::NOT_FOUND, "no such endpoint") })
        .with_state(ws)
}

pub async fn bind(addr: &str) -> Result<TcpListener, StoreError> {
    TcpListener::bind(addr).await.map_err(|source| StoreError::Bind { addr: addr.to_string(), source })
}

/// Serves until the listener fails.
pub async fn serve_on(ws: Arc<Workspace>, listener: TcpListener) -> Result<(), StoreError> {
    axum::serve(listener, router(ws)).await?;
    Ok(())
}

pub async fn serve(ws: Arc<Workspace>, addr: &str) -> Result<(), StoreError> {
    let listener = bind(addr).await?;
    log::info!(
        "listening on {}",
        listener.local_addr().map_or_else(|_| addr.to_string(), |a: SocketAddr| a.to_string())
    );
    serve_on(ws, listener).await
}
