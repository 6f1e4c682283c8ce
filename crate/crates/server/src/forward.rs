//! Plumbing shared by both proxies: hop-by-hop headers, body buffering and
//! the upstream client.

use axum::body::Body;
use axum::http::header::{CONNECTION, CONTENT_ENCODING, CONTENT_LENGTH, CONTENT_TYPE, TRANSFER_ENCODING};
use axum::http::{HeaderMap, HeaderName, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use bytes::Bytes;
use futures_util::stream::{self, StreamExt};
use gateway_core::MiddleConfig;
use url::Url;

const HOP_BY_HOP: &[&str] = &[
    "connection",
    "keep-alive",
    "proxy-authenticate",
    "proxy-authorization",
    "proxy-connection",
    "te",
    "trailer",
    "transfer-encoding",
    "upgrade",
];

pub(crate) const IDENTITY: HeaderValue = HeaderValue::from_static("identity");

/// Removes the fixed hop-by-hop set plus anything named in `Connection`.
pub(crate) fn remove_hop_by_hop(headers: &mut HeaderMap) {
    let listed: Vec<HeaderName> = headers
        .get_all(CONNECTION)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .filter_map(|name| HeaderName::from_bytes(name.trim().as_bytes()).ok())
        .collect();
    for name in listed {
        headers.remove(name);
    }
    for name in HOP_BY_HOP {
        headers.remove(*name);
    }
}

/// Lowercased media type without parameters.
pub(crate) fn mime_essence(headers: &HeaderMap) -> Option<String> {
    let value = headers.get(CONTENT_TYPE)?.to_str().ok()?;
    let essence = value.split(';').next()?.trim().to_ascii_lowercase();
    (!essence.is_empty()).then_some(essence)
}

pub(crate) fn is_html(essence: &str) -> bool {
    matches!(essence, "text/html" | "application/xhtml+xml")
}

pub(crate) fn is_css(essence: &str) -> bool {
    essence == "text/css"
}

pub(crate) fn is_identity_encoded(headers: &HeaderMap) -> bool {
    headers
        .get_all(CONTENT_ENCODING)
        .iter()
        .all(|v| v.to_str().is_ok_and(|v| v.trim().eq_ignore_ascii_case("identity")))
}

/// Replaces the body of a rewritten response and marks it UTF-8.
pub(crate) fn set_utf8_body_headers(headers: &mut HeaderMap, essence: &str) {
    headers.remove(CONTENT_LENGTH);
    let value = HeaderValue::from_str(&format!("{essence}; charset=utf-8")).expect("essence came from a header value");
    headers.insert(CONTENT_TYPE, value);
}

pub(crate) fn response_has_body(method: &Method, status: StatusCode) -> bool {
    method != Method::HEAD
        && !status.is_informational()
        && status != StatusCode::NO_CONTENT
        && status != StatusCode::NOT_MODIFIED
}

pub fn build_client(config: &MiddleConfig) -> reqwest::Result<reqwest::Client> {
    reqwest::Client::builder()
        .redirect(reqwest::redirect::Policy::none())
        .connect_timeout(config.connect_timeout())
        .read_timeout(config.request_timeout())
        .http1_only()
        .build()
}

/// Sends a request, streaming the incoming body only when it has one.
pub(crate) async fn send(
    client: &reqwest::Client,
    method: Method,
    url: Url,
    headers: HeaderMap,
    body: Body,
) -> reqwest::Result<reqwest::Response> {
    let has_body = headers.contains_key(CONTENT_LENGTH) || headers.contains_key(TRANSFER_ENCODING);
    let mut request = client.request(method, url).headers(headers);
    if has_body {
        request = request.body(reqwest::Body::wrap_stream(body.into_data_stream()));
    }
    request.send().await
}

pub(crate) fn stream_body(response: reqwest::Response) -> Body {
    Body::from_stream(response.bytes_stream())
}

/// Reads the whole body if it fits in `limit` bytes. Otherwise returns a body
/// that replays what was read and streams the rest.
pub(crate) async fn buffer_body(mut response: reqwest::Response, limit: usize) -> reqwest::Result<Result<Bytes, Body>> {
    if response.content_length().is_some_and(|len| len > limit as u64) {
        return Ok(Err(stream_body(response)));
    }
    let mut chunks = Vec::new();
    let mut total = 0;
    while let Some(chunk) = response.chunk().await? {
        total += chunk.len();
        chunks.push(chunk);
        if total > limit {
            let replay = stream::iter(chunks.into_iter().map(Ok::<_, reqwest::Error>));
            return Ok(Err(Body::from_stream(replay.chain(response.bytes_stream()))));
        }
    }
    Ok(Ok(chunks.concat().into()))
}

pub(crate) fn bad_gateway() -> Response {
    (StatusCode::BAD_GATEWAY, "bad gateway\n").into_response()
}

pub(crate) fn is_upgrade(headers: &HeaderMap) -> bool {
    headers.contains_key(axum::http::header::UPGRADE)
        && headers
            .get_all(CONNECTION)
            .iter()
            .filter_map(|v| v.to_str().ok())
            .flat_map(|v| v.split(','))
            .any(|token| token.trim().eq_ignore_ascii_case("upgrade"))
}
