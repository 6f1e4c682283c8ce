//! The middle party: decapsulates `?src=` and `?emb=` URLs.
//!
//! In-context requests are forwarded to the third party with the stateful
//! tracking headers removed in both directions. Cross-context requests get
//! a trampoline page that re-opens the target through a `noreferrer` link,
//! so the third party never learns which site embedded it.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Request, State};
use axum::http::header::{
    ACCEPT_ENCODING, CACHE_CONTROL, CONTENT_SECURITY_POLICY, CONTENT_TYPE, HOST, REFERRER_POLICY, SET_COOKIE,
};
use axum::http::{HeaderMap, HeaderValue, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use gateway_core::{
    decode, decode_stylesheet, rewrite_css, ContextKind, GatewayConfig, HeaderList, OriginSet, ProxiedUrl,
    TrackingPolicy,
};
use tracing::{info, warn};
use url::Url;

use crate::forward::{
    bad_gateway, buffer_body, build_client, is_css, is_identity_encoded, mime_essence, remove_hop_by_hop,
    response_has_body, send, set_utf8_body_headers, stream_body, IDENTITY,
};
use crate::ServerError;

/// Runs inside the trampoline page: a top-level trampoline opens the target
/// in a new window and closes itself; a framed one loads the target into a
/// nested frame. Either way the navigation goes through the `noreferrer`
/// anchor.
pub const TRAMPOLINE_SCRIPT: &str = include_str!("../assets/trampoline.js");

const SANDBOX: &str = "sandbox allow-scripts allow-same-origin";
const STRICT_SANDBOX: &str = "sandbox allow-scripts";

pub fn trampoline_html(target: &Url) -> String {
    format!(
        "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title></title>\n</head>\n<body>\n\
         <a href=\"{}\" rel=\"noreferrer noopener\" target=\"\"></a>\n<script>\n{}</script>\n</body>\n</html>\n",
        html_escape::encode_double_quoted_attribute(target.as_str()),
        TRAMPOLINE_SCRIPT
    )
}

#[derive(Debug, Default)]
pub struct MiddleMetrics {
    pub requests: AtomicU64,
    pub in_context: AtomicU64,
    pub cross_context: AtomicU64,
    pub rejected: AtomicU64,
    pub upstream_errors: AtomicU64,
    pub headers_removed: AtomicU64,
}

pub struct MiddleServer {
    origins: OriginSet,
    policy: TrackingPolicy,
    client: reqwest::Client,
    sandbox: HeaderValue,
    max_rewrite_size: usize,
    metrics: MiddleMetrics,
}

impl MiddleServer {
    pub fn new(config: &GatewayConfig) -> Result<Self, ServerError> {
        let config = config.clone().validated()?;
        let origins = config.origins().map_err(gateway_core::ConfigError::from)?;
        let sandbox = if config.middle.strict_sandbox { STRICT_SANDBOX } else { SANDBOX };
        Ok(MiddleServer {
            client: build_client(&config.middle)?,
            sandbox: HeaderValue::from_static(sandbox),
            max_rewrite_size: config.max_rewrite_size,
            policy: config.policy,
            origins,
            metrics: MiddleMetrics::default(),
        })
    }

    pub fn metrics(&self) -> &MiddleMetrics {
        &self.metrics
    }

    pub fn router(self: Arc<Self>) -> Router {
        Router::new().fallback(handle).layer(axum::middleware::map_response(strip_set_cookie)).with_state(self)
    }

    fn request_url(&self, uri: &Uri) -> Url {
        let mut url = self.origins.middle_party().to_url();
        url.set_path(uri.path());
        url.set_query(uri.query());
        url
    }

    async fn in_context(&self, proxied: ProxiedUrl, request: Request) -> Response {
        let (parts, body) = request.into_parts();
        let mut inbound = parts.headers;
        remove_hop_by_hop(&mut inbound);
        inbound.remove(HOST);
        let stripped = self.policy.strip_request_headers(&HeaderList::from(&inbound));
        let mut headers = stripped.headers.to_header_map();
        headers.insert(ACCEPT_ENCODING, IDENTITY);

        let target = proxied.target().clone();
        let upstream = match send(&self.client, parts.method.clone(), target.clone(), headers, body).await {
            Ok(response) => response,
            Err(err) => {
                self.metrics.upstream_errors.fetch_add(1, Ordering::Relaxed);
                warn!(host = target.host_str().unwrap_or(""), error = %err, "third-party request failed");
                return bad_gateway();
            }
        };
        let status = upstream.status();
        let mut received = upstream.headers().clone();
        remove_hop_by_hop(&mut received);
        let sanitized = self.policy.strip_response_headers(&HeaderList::from(&received), &self.origins, &proxied);
        let mut headers = sanitized.headers.to_header_map();
        if self.policy.strip_referer_outbound {
            headers.insert(REFERRER_POLICY, HeaderValue::from_static("no-referrer"));
        }

        let removed = (stripped.removed.len() + sanitized.removed.len()) as u64;
        self.metrics.headers_removed.fetch_add(removed, Ordering::Relaxed);
        info!(host = target.host_str().unwrap_or(""), kind = "in-context", status = status.as_u16(), removed, "middle");

        let essence = mime_essence(&headers);
        let rewrite = essence.as_deref().is_some_and(is_css)
            && response_has_body(&parts.method, status)
            && is_identity_encoded(&headers);
        if !rewrite {
            return build(status, headers, stream_body(upstream));
        }
        let bytes = match buffer_body(upstream, self.max_rewrite_size).await {
            Ok(Ok(bytes)) => bytes,
            Ok(Err(body)) => return build(status, headers, body),
            Err(err) => {
                self.metrics.upstream_errors.fetch_add(1, Ordering::Relaxed);
                warn!(error = %err, "reading third-party body failed");
                return bad_gateway();
            }
        };
        let content_type = headers.get(CONTENT_TYPE).and_then(|v| v.to_str().ok()).map(str::to_owned);
        match decode_stylesheet(&bytes, content_type.as_deref()) {
            Some(text) => {
                let (out, _) = rewrite_css(&text, &target, &self.origins);
                set_utf8_body_headers(&mut headers, essence.as_deref().unwrap_or("text/css"));
                build(status, headers, Body::from(out))
            }
            None => build(status, headers, Body::from(bytes)),
        }
    }

    fn trampoline(&self, proxied: &ProxiedUrl) -> Response {
        info!(
            host = proxied.target().host_str().unwrap_or(""),
            kind = "cross-context",
            status = 200,
            removed = 0,
            "middle"
        );
        let mut response = Response::new(Body::from(trampoline_html(proxied.target())));
        let headers = response.headers_mut();
        headers.insert(CONTENT_TYPE, HeaderValue::from_static("text/html; charset=utf-8"));
        headers.insert(CONTENT_SECURITY_POLICY, self.sandbox.clone());
        headers.insert(REFERRER_POLICY, HeaderValue::from_static("no-referrer"));
        headers.insert(CACHE_CONTROL, HeaderValue::from_static("no-store"));
        response
    }
}

fn build(status: StatusCode, headers: HeaderMap, body: Body) -> Response {
    let mut response = Response::new(body);
    *response.status_mut() = status;
    *response.headers_mut() = headers;
    response
}

async fn strip_set_cookie(mut response: Response) -> Response {
    response.headers_mut().remove(SET_COOKIE);
    response
}

async fn handle(State(server): State<Arc<MiddleServer>>, request: Request) -> Response {
    server.metrics.requests.fetch_add(1, Ordering::Relaxed);
    let url = server.request_url(request.uri());
    let proxied = match decode(&url, &server.origins) {
        Ok(proxied) => proxied,
        Err(err) => {
            server.metrics.rejected.fetch_add(1, Ordering::Relaxed);
            info!(path = request.uri().path(), error = %err, "rejected");
            return (StatusCode::BAD_REQUEST, format!("{err}\n")).into_response();
        }
    };
    match proxied.kind() {
        ContextKind::InContext => {
            server.metrics.in_context.fetch_add(1, Ordering::Relaxed);
            server.in_context(proxied, request).await
        }
        ContextKind::CrossContext => {
            server.metrics.cross_context.fetch_add(1, Ordering::Relaxed);
            server.trampoline(&proxied)
        }
    }
}
