use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use dissect_core::artifacts::{to_json, ErrorBody};
use dissect_core::io::Split;
use dissect_core::report::{Axis, DEFAULT_ALPHA, DEFAULT_TOP_SAMPLES, DEFAULT_TOP_UNITS};
use serde::Serialize;
use sha2::{Digest, Sha256};
use tower_http::services::ServeDir;

use crate::index::{ServeError, ServingIndex, UnitSort};

type Params = Query<HashMap<String, String>>;
type Shared = State<Arc<ServingIndex>>;

const PLACEHOLDER_PAGE: &str = "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>dissect</title></head>\n<body><p>No UI assets configured. The JSON API is under <code>/api/</code>.</p></body></html>\n";

pub fn router(index: Arc<ServingIndex>) -> Router {
    let api = Router::new()
        .route("/api/units", get(units))
        .route("/api/units/{k}", get(unit))
        .route("/api/units/{k}/top-samples", get(top_samples))
        .route("/api/samples", get(samples))
        .route("/api/samples/{id}", get(sample))
        .route("/api/samples/{id}/relevance", get(relevance))
        .route("/api/overlays/{sample}/{unit}/{axis}/{slice}", get(overlay))
        .route("/api/patches/{sample}/{axis}/{slice}", get(patch))
        .route("/api", get(unknown_route))
        .route("/api/{*rest}", get(unknown_route));
    let router = match index.ui_dir().filter(|d| d.is_dir()) {
        Some(dir) => api.fallback_service(ServeDir::new(dir).fallback(get(unknown_route))),
        None => api.route("/", get(|| async { Html(PLACEHOLDER_PAGE) })).fallback(unknown_route),
    };
    router.with_state(index)
}

impl IntoResponse for ServeError {
    fn into_response(self) -> Response {
        let (status, code) = match &self {
            ServeError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ServeError::BadRequest(_) => (StatusCode::BAD_REQUEST, "bad_request"),
            ServeError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status.is_server_error() {
            log::error!("{self}");
        }
        let body = to_json(&ErrorBody {
            error: code.to_string(),
            message: self.to_string(),
        });
        (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
    }
}

async fn unknown_route() -> ServeError {
    ServeError::NotFound("no such route".into())
}

/// Body with a content-hash ETag; a matching `If-None-Match` yields 304.
fn cached(headers: &HeaderMap, body: Vec<u8>, content_type: &'static str) -> Response {
    let etag = format!("\"{}\"", hex::encode(Sha256::digest(&body)));
    let matches = headers
        .get_all(header::IF_NONE_MATCH)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .any(|t| {
            let t = t.trim();
            t == "*" || t.trim_start_matches("W/") == etag
        });
    let etag = HeaderValue::from_str(&etag).expect("hex etag is a valid header");
    if matches {
        return (StatusCode::NOT_MODIFIED, [(header::ETAG, etag)]).into_response();
    }
    (
        [
            (header::CONTENT_TYPE, HeaderValue::from_static(content_type)),
            (header::ETAG, etag),
            (header::CACHE_CONTROL, HeaderValue::from_static("no-cache")),
        ],
        body,
    )
        .into_response()
}

fn json<T: Serialize>(headers: &HeaderMap, value: &T) -> Response {
    cached(headers, to_json(value), "application/json")
}

fn png(headers: &HeaderMap, bytes: Vec<u8>) -> Response {
    cached(headers, bytes, "image/png")
}

async fn blocking<T, F>(f: F) -> Result<T, ServeError>
where
    F: FnOnce() -> Result<T, ServeError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServeError::Internal(format!("worker failed: {e}")))?
}

fn param<T: std::str::FromStr>(q: &HashMap<String, String>, name: &str) -> Result<Option<T>, ServeError>
where
    T::Err: std::fmt::Display,
{
    q.get(name)
        .map(|v| v.parse::<T>().map_err(|e| ServeError::BadRequest(format!("query parameter {name}={v:?}: {e}"))))
        .transpose()
}

fn segment<T: std::str::FromStr>(name: &str, v: &str) -> Result<T, ServeError> {
    v.parse()
        .map_err(|_| ServeError::NotFound(format!("invalid {name} {v:?}")))
}

fn png_slice(file: &str) -> Result<usize, ServeError> {
    let stem = file
        .strip_suffix(".png")
        .ok_or_else(|| ServeError::NotFound(format!("{file:?} is not a .png resource")))?;
    segment("slice", stem)
}

fn axis_segment(v: &str) -> Result<Axis, ServeError> {
    v.parse().map_err(ServeError::NotFound)
}

async fn units(State(idx): Shared, Query(q): Params, headers: HeaderMap) -> Result<Response, ServeError> {
    let sort = match q.get("sort").map(String::as_str) {
        None | Some("correlation") => UnitSort::Correlation,
        Some("unit") => UnitSort::Unit,
        Some(other) => return Err(ServeError::BadRequest(format!("unknown sort {other:?}, expected correlation or unit"))),
    };
    let offset = param(&q, "offset")?.unwrap_or(0);
    let limit = param(&q, "limit")?;
    Ok(json(&headers, &idx.unit_list(sort, offset, limit)))
}

async fn unit(State(idx): Shared, Path(k): Path<String>, headers: HeaderMap) -> Result<Response, ServeError> {
    let k = segment("unit", &k)?;
    Ok(json(&headers, &idx.unit_detail(k)?))
}

async fn top_samples(State(idx): Shared, Path(k): Path<String>, Query(q): Params, headers: HeaderMap) -> Result<Response, ServeError> {
    let k = segment("unit", &k)?;
    let n = param(&q, "n")?.unwrap_or(DEFAULT_TOP_SAMPLES);
    let fractured = param(&q, "fractured")?.unwrap_or(true);
    let body = blocking(move || idx.top_samples(k, n, fractured)).await?;
    Ok(json(&headers, &body))
}

async fn samples(State(idx): Shared, Query(q): Params, headers: HeaderMap) -> Result<Response, ServeError> {
    let offset = param(&q, "offset")?.unwrap_or(0);
    let limit = param(&q, "limit")?;
    let split = param::<Split>(&q, "split")?.unwrap_or(Split::All);
    Ok(json(&headers, &idx.sample_list(offset, limit, split)))
}

async fn sample(State(idx): Shared, Path(id): Path<String>, headers: HeaderMap) -> Result<Response, ServeError> {
    let body = blocking(move || idx.sample_detail(&id)).await?;
    Ok(json(&headers, &body))
}

async fn relevance(State(idx): Shared, Path(id): Path<String>, Query(q): Params, headers: HeaderMap) -> Result<Response, ServeError> {
    let top = param(&q, "top")?.unwrap_or(DEFAULT_TOP_UNITS);
    let axis = param::<Axis>(&q, "axis")?.unwrap_or_default();
    let body = blocking(move || idx.report(&id, top, axis)).await?;
    Ok(json(&headers, &body))
}

async fn overlay(
    State(idx): Shared,
    Path((sample, unit, axis, file)): Path<(String, String, String, String)>,
    Query(q): Params,
    headers: HeaderMap,
) -> Result<Response, ServeError> {
    let unit = segment("unit", &unit)?;
    let axis = axis_segment(&axis)?;
    let slice = png_slice(&file)?;
    let alpha = param::<f64>(&q, "alpha")?.unwrap_or(DEFAULT_ALPHA);
    let body = blocking(move || idx.overlay_png(&sample, unit, axis, slice, alpha)).await?;
    Ok(png(&headers, body))
}

async fn patch(
    State(idx): Shared,
    Path((sample, axis, file)): Path<(String, String, String)>,
    headers: HeaderMap,
) -> Result<Response, ServeError> {
    let axis = axis_segment(&axis)?;
    let slice = png_slice(&file)?;
    let body = blocking(move || idx.patch_png(&sample, axis, slice)).await?;
    Ok(png(&headers, body))
}
