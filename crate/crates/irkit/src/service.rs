//! HTTP+JSON inference service over an immutable model bundle.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Value};

use crate::api::{self, FieldError, SCHEMA_VERSION, VERSION};
use crate::bundle::{ApiError, Bundle};

type Shared = Arc<Bundle>;

#[derive(Serialize)]
struct ErrorDetail<'a> {
    code: &'a str,
    message: &'a str,
    fields: &'a [FieldError],
}

fn error_response(bundle: &Bundle, e: &ApiError) -> Response {
    let status = StatusCode::from_u16(e.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let body = json!({
        "schema_version": SCHEMA_VERSION,
        "version": VERSION,
        "fingerprint": bundle.fingerprint,
        "error": ErrorDetail { code: e.code, message: &e.message, fields: &e.fields },
    });
    (status, Json(body)).into_response()
}

fn reply<T: Serialize>(bundle: &Bundle, r: Result<T, ApiError>) -> Response {
    match r {
        Ok(body) => (StatusCode::OK, Json(body)).into_response(),
        Err(e) => error_response(bundle, &e),
    }
}

fn parse_body(body: &[u8]) -> Result<Value, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        let mut err = ApiError::new(400, "malformed_json", format!("request body is not valid JSON: {e}"));
        err.fields
            .push(FieldError::new("", format!("line {}, column {}", e.line(), e.column())));
        err
    })
}

async fn health(State(b): State<Shared>) -> Response {
    reply(
        &b,
        Ok(json!({
            "status": "ok",
            "schema_version": SCHEMA_VERSION,
            "version": VERSION,
            "fingerprint": b.fingerprint,
            "models": b.ids(),
        })),
    )
}

async fn models(State(b): State<Shared>) -> Response {
    reply(
        &b,
        Ok(json!({
            "schema_version": SCHEMA_VERSION,
            "version": VERSION,
            "fingerprint": b.fingerprint,
            "models": b.infos(),
            "background_rows": b.background.len(),
        })),
    )
}

async fn schema(State(b): State<Shared>) -> Response {
    let mut s = api::api_schema();
    s["version"] = json!(VERSION);
    s["fingerprint"] = json!(b.fingerprint);
    reply(&b, Ok(s))
}

async fn predict(State(b): State<Shared>, body: Bytes) -> Response {
    let r = parse_body(&body).and_then(|v| api::parse_predict(&v).map_err(ApiError::validation));
    let r = r.and_then(|req| b.predict(&req));
    reply(&b, r)
}

async fn whatif(State(b): State<Shared>, body: Bytes) -> Response {
    let r = parse_body(&body).and_then(|v| api::parse_whatif(&v).map_err(ApiError::validation));
    let r = r.and_then(|req| b.whatif(&req));
    reply(&b, r)
}

async fn explain(State(b): State<Shared>, body: Bytes) -> Response {
    let req = match parse_body(&body).and_then(|v| api::parse_explain(&v).map_err(ApiError::validation)) {
        Ok(req) => req,
        Err(e) => return error_response(&b, &e),
    };
    let worker = Arc::clone(&b);
    let r = tokio::task::spawn_blocking(move || worker.explain(&req))
        .await
        .unwrap_or_else(|e| Err(ApiError::internal(e)));
    reply(&b, r)
}

async fn not_found(State(b): State<Shared>, uri: Uri) -> Response {
    let mut e = ApiError::new(404, "not_found", "no such endpoint");
    e.fields
        .push(FieldError::new("path", format!("{} is not served", uri.path())));
    error_response(&b, &e)
}

async fn wrong_method(State(b): State<Shared>, method: Method, uri: Uri) -> Response {
    let mut e = ApiError::new(405, "method_not_allowed", "method not allowed for this endpoint");
    e.fields.push(FieldError::new(
        "method",
        format!("{method} is not accepted by {}", uri.path()),
    ));
    error_response(&b, &e)
}

pub fn router(bundle: Arc<Bundle>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/models", get(models))
        .route("/schema", get(schema))
        .route("/predict", post(predict))
        .route("/whatif", post(whatif))
        .route("/explain", post(explain))
        .fallback(not_found)
        .method_not_allowed_fallback(wrong_method)
        .with_state(bundle)
}

/// Serves on `listener` until `shutdown` resolves, letting in-flight
/// requests finish.
pub async fn serve_until<F>(bundle: Arc<Bundle>, listener: tokio::net::TcpListener, shutdown: F) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    log::info!(
        "serving {} models from {} on http://{}",
        bundle.entries.len(),
        bundle.dir.display(),
        listener.local_addr()?
    );
    axum::serve(listener, router(bundle))
        .with_graceful_shutdown(shutdown)
        .await
}

/// Serves until Ctrl-C.
pub async fn serve(bundle: Arc<Bundle>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_until(bundle, listener, async {
        let _ = tokio::signal::ctrl_c().await;
        log::info!("shutting down");
    })
    .await
}
