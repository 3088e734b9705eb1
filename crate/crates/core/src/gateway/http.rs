//! HTTP binding of the gateway.

use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::extract::{Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::Response;
use axum::Router;

use super::{ApiRequest, ApiResponse, Gateway, MAX_BODY_BYTES};
use crate::network::tcp::now_ms;

/// Router forwarding every request to [`Gateway::handle`].
pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new().fallback(serve).with_state(gateway)
}

fn cors(resp: &mut Response) {
    let h = resp.headers_mut();
    h.insert(header::ACCESS_CONTROL_ALLOW_ORIGIN, HeaderValue::from_static("*"));
    h.insert(header::ACCESS_CONTROL_ALLOW_HEADERS, HeaderValue::from_static("authorization, content-type"));
    h.insert(header::ACCESS_CONTROL_ALLOW_METHODS, HeaderValue::from_static("GET, POST, PATCH, DELETE, OPTIONS"));
    h.insert(header::ACCESS_CONTROL_EXPOSE_HEADERS, HeaderValue::from_static("content-disposition"));
}

async fn serve(State(gateway): State<Arc<Gateway>>, req: Request) -> Response {
    let method = req.method().as_str().to_string();
    if method == "OPTIONS" {
        let mut resp = Response::new(Body::empty());
        *resp.status_mut() = StatusCode::NO_CONTENT;
        cors(&mut resp);
        return resp;
    }
    let path = req.uri().path_and_query().map_or_else(|| req.uri().path().to_string(), |p| p.as_str().to_string());
    let token = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(|t| t.trim().to_string());
    let api = match to_bytes(req.into_body(), MAX_BODY_BYTES).await {
        Ok(body) => {
            let request = ApiRequest { method, path, token, body: body.to_vec() };
            tokio::task::spawn_blocking(move || gateway.handle(&request, now_ms()))
                .await
                .unwrap_or_else(|_| super::ApiError::new(500, "Internal", "handler failed").into_response())
        }
        Err(_) => super::ApiError::new(413, "PayloadTooLarge", "request body too large").into_response(),
    };
    into_response(api)
}

fn into_response(api: ApiResponse) -> Response {
    let mut resp = Response::new(Body::from(api.body));
    *resp.status_mut() = StatusCode::from_u16(api.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    if let Ok(v) = HeaderValue::from_str(&api.content_type) {
        resp.headers_mut().insert(header::CONTENT_TYPE, v);
    }
    for (k, v) in api.headers {
        if let (Ok(k), Ok(v)) = (header::HeaderName::from_bytes(k.as_bytes()), HeaderValue::from_str(&v)) {
            resp.headers_mut().insert(k, v);
        }
    }
    cors(&mut resp);
    resp
}
