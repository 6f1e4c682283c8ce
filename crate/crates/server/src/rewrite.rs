//! Reverse proxy in front of the original web server.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::extract::{Request, State};
use axum::http::header::{
    ACCEPT_ENCODING, CACHE_CONTROL, CONTENT_LENGTH, CONTENT_SECURITY_POLICY, CONTENT_TYPE, LOCATION,
    X_CONTENT_TYPE_OPTIONS,
};
use axum::http::{HeaderMap, HeaderValue, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use bytes::Bytes;
use gateway_core::{
    build_csp, decode_stylesheet, rewrite_css, GatewayConfig, HtmlRewriter, Origin, OriginSet, RewriteReport,
};
use hyper_util::rt::TokioIo;
use tracing::{info, warn};
use url::Url;

use crate::forward::{
    bad_gateway, buffer_body, build_client, is_css, is_html, is_identity_encoded, is_upgrade, mime_essence,
    remove_hop_by_hop, response_has_body, send, set_utf8_body_headers, stream_body, IDENTITY,
};
use crate::{shim, ServerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Decision {
    Shim,
    Forwarded,
    Rewritten,
    /// Rewritable type served unmodified: too large, compressed or not
    /// decodable.
    PassedThrough,
    Tunneled,
    Error,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Shim => "shim",
            Decision::Forwarded => "forwarded",
            Decision::Rewritten => "rewritten",
            Decision::PassedThrough => "passed-through",
            Decision::Tunneled => "tunneled",
            Decision::Error => "error",
        })
    }
}

#[derive(Debug, Default)]
pub struct RewriteMetrics {
    pub requests: AtomicU64,
    pub shim: AtomicU64,
    pub forwarded: AtomicU64,
    pub rewritten: AtomicU64,
    pub passed_through: AtomicU64,
    pub tunneled: AtomicU64,
    pub errors: AtomicU64,
    /// URLs rewritten across all documents.
    pub urls_rewritten: AtomicU64,
}

impl RewriteMetrics {
    fn record(&self, decision: Decision, report: &RewriteReport) {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let counter = match decision {
            Decision::Shim => &self.shim,
            Decision::Forwarded => &self.forwarded,
            Decision::Rewritten => &self.rewritten,
            Decision::PassedThrough => &self.passed_through,
            Decision::Tunneled => &self.tunneled,
            Decision::Error => &self.errors,
        };
        counter.fetch_add(1, Ordering::Relaxed);
        self.urls_rewritten.fetch_add(report.total(), Ordering::Relaxed);
    }
}

pub struct RewriteServer {
    config: GatewayConfig,
    origins: OriginSet,
    upstream_origin: Origin,
    rewriter: HtmlRewriter,
    csp: HeaderValue,
    shim: Bytes,
    client: reqwest::Client,
    metrics: RewriteMetrics,
}

type Outcome = (Response, Decision, RewriteReport);

impl RewriteServer {
    pub fn new(config: GatewayConfig) -> Result<Self, ServerError> {
        let config = config.validated()?;
        let origins = config.origins().map_err(gateway_core::ConfigError::from)?;
        let upstream_origin = Origin::of(&config.upstream)
            .ok_or_else(|| gateway_core::ConfigError::Invalid("upstream must be an http(s) URL".into()))?;
        let shim = shim::load(config.shim_template.as_deref(), &origins)?;
        let csp = HeaderValue::from_str(&build_csp(&origins, &config.csp))
            .map_err(|_| gateway_core::ConfigError::Invalid("CSP is not a valid header value".into()))?;
        Ok(RewriteServer {
            rewriter: HtmlRewriter::new(origins.clone(), &config.rules, config.shim_path.clone()),
            client: build_client(&config.middle)?,
            shim: shim.into(),
            csp,
            upstream_origin,
            origins,
            config,
            metrics: RewriteMetrics::default(),
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn metrics(&self) -> &RewriteMetrics {
        &self.metrics
    }

    pub fn router(self: Arc<Self>) -> Router {
        Router::new().fallback(handle).with_state(self)
    }

    /// The URL the browser believes it fetched, used as the rewrite base.
    fn document_url(&self, uri: &Uri) -> Url {
        let mut url = self.origins.first_party().to_url();
        url.set_path(uri.path());
        url.set_query(uri.query());
        url
    }

    fn upstream_url(&self, uri: &Uri) -> Url {
        let mut url = self.config.upstream.clone();
        url.set_path(uri.path());
        url.set_query(uri.query());
        url
    }

    fn serve_shim(&self, method: &Method) -> Response {
        if method != Method::GET && method != Method::HEAD {
            return StatusCode::METHOD_NOT_ALLOWED.into_response();
        }
        let mut response = Response::new(Body::from(self.shim.clone()));
        let headers = response.headers_mut();
        headers.insert(CONTENT_TYPE, HeaderValue::from_static("text/javascript; charset=utf-8"));
        headers.insert(CACHE_CONTROL, HeaderValue::from_static("no-store"));
        headers.insert(X_CONTENT_TYPE_OPTIONS, HeaderValue::from_static("nosniff"));
        response
    }

    /// Absolute upstream redirects to the upstream's own address are mapped
    /// back onto the first-party origin. Relative ones already are.
    fn map_location(&self, headers: &mut HeaderMap, upstream_url: &Url) {
        let Some(location) = headers.get(LOCATION).and_then(|v| v.to_str().ok()) else {
            return;
        };
        if Url::parse(location).is_err() && !location.starts_with("//") {
            return;
        }
        let Ok(mut target) = upstream_url.join(location) else {
            return;
        };
        if Origin::of(&target).as_ref() != Some(&self.upstream_origin) {
            return;
        }
        let first = self.origins.first_party();
        let _ = target.set_scheme(first.scheme());
        let _ = target.set_host(Some(first.host()));
        let _ = target.set_port(Some(first.port()));
        if let Ok(value) = HeaderValue::from_str(target.as_str()) {
            headers.insert(LOCATION, value);
        }
    }

    async fn dispatch(&self, request: Request) -> Outcome {
        if request.uri().path() == self.config.shim_path {
            return (self.serve_shim(request.method()), Decision::Shim, RewriteReport::default());
        }
        if is_upgrade(request.headers()) {
            return self.tunnel(request).await;
        }

        let document_url = self.document_url(request.uri());
        let upstream_url = self.upstream_url(request.uri());
        let (parts, body) = request.into_parts();
        let mut headers = parts.headers;
        remove_hop_by_hop(&mut headers);
        headers.insert(ACCEPT_ENCODING, IDENTITY);

        let upstream = match send(&self.client, parts.method.clone(), upstream_url.clone(), headers, body).await {
            Ok(response) => response,
            Err(err) => {
                warn!(error = %err, "upstream request failed");
                return (bad_gateway(), Decision::Error, RewriteReport::default());
            }
        };

        let status = upstream.status();
        let mut headers = upstream.headers().clone();
        remove_hop_by_hop(&mut headers);
        self.map_location(&mut headers, &upstream_url);

        let essence = mime_essence(&headers);
        let html = essence.as_deref().is_some_and(is_html);
        let css = essence.as_deref().is_some_and(is_css);
        if html {
            headers.remove(CONTENT_SECURITY_POLICY);
            headers.insert(CONTENT_SECURITY_POLICY, self.csp.clone());
        }

        if !(html || css) {
            return (build(status, headers, stream_body(upstream)), Decision::Forwarded, RewriteReport::default());
        }
        if !response_has_body(&parts.method, status) {
            headers.remove(CONTENT_LENGTH);
            return (build(status, headers, Body::empty()), Decision::Forwarded, RewriteReport::default());
        }
        if !is_identity_encoded(&headers) {
            warn!(path = document_url.path(), "compressed upstream body, not rewritten");
            return (build(status, headers, stream_body(upstream)), Decision::PassedThrough, RewriteReport::default());
        }

        let bytes = match buffer_body(upstream, self.config.max_rewrite_size).await {
            Ok(Ok(bytes)) => bytes,
            Ok(Err(body)) => {
                warn!(
                    path = document_url.path(),
                    limit = self.config.max_rewrite_size,
                    "body exceeds max_rewrite_size, not rewritten"
                );
                return (build(status, headers, body), Decision::PassedThrough, RewriteReport::default());
            }
            Err(err) => {
                warn!(error = %err, "reading upstream body failed");
                return (bad_gateway(), Decision::Error, RewriteReport::default());
            }
        };
        let essence = essence.expect("html or css implies a content type");
        let content_type = headers.get(CONTENT_TYPE).and_then(|v| v.to_str().ok()).map(str::to_owned);

        let rewritten = if html {
            self.rewriter
                .rewrite_html(&bytes, content_type.as_deref(), &document_url)
                .map_err(|err| warn!(error = %err, "HTML rewrite failed"))
                .ok()
        } else {
            decode_stylesheet(&bytes, content_type.as_deref()).map(|text| {
                let (out, report) = rewrite_css(&text, &document_url, &self.origins);
                (out.into_bytes(), report)
            })
        };
        match rewritten {
            Some((out, report)) => {
                set_utf8_body_headers(&mut headers, &essence);
                (build(status, headers, Body::from(out)), Decision::Rewritten, report)
            }
            None => (build(status, headers, Body::from(bytes)), Decision::PassedThrough, RewriteReport::default()),
        }
    }

    /// Forwards an upgrade request and, on `101`, splices the two
    /// connections together without looking at the traffic.
    async fn tunnel(&self, mut request: Request) -> Outcome {
        let on_client_upgrade = hyper::upgrade::on(&mut request);
        let upstream_url = self.upstream_url(request.uri());
        let (parts, _) = request.into_parts();
        let upstream = self.client.request(parts.method, upstream_url).headers(parts.headers).send().await;
        let upstream = match upstream {
            Ok(response) => response,
            Err(err) => {
                warn!(error = %err, "upstream upgrade failed");
                return (bad_gateway(), Decision::Error, RewriteReport::default());
            }
        };
        let status = upstream.status();
        let headers = upstream.headers().clone();
        if status != StatusCode::SWITCHING_PROTOCOLS {
            return (build(status, headers, stream_body(upstream)), Decision::Forwarded, RewriteReport::default());
        }
        tokio::spawn(async move {
            let (client, server) =
                match tokio::try_join!(async { on_client_upgrade.await.map_err(|e| e.to_string()) }, async {
                    upstream.upgrade().await.map_err(|e| e.to_string())
                },)
                {
                    Ok(pair) => pair,
                    Err(err) => {
                        warn!(error = %err, "upgrade handshake failed");
                        return;
                    }
                };
            let mut client = TokioIo::new(client);
            let mut server = server;
            let _ = tokio::io::copy_bidirectional(&mut client, &mut server).await;
        });
        (build(status, headers, Body::empty()), Decision::Tunneled, RewriteReport::default())
    }
}

fn build(status: StatusCode, headers: HeaderMap, body: Body) -> Response {
    let mut response = Response::new(body);
    *response.status_mut() = status;
    *response.headers_mut() = headers;
    response
}

async fn handle(State(server): State<Arc<RewriteServer>>, request: Request) -> Response {
    let method = request.method().clone();
    let path = request.uri().path().to_owned();
    let (response, decision, report) = server.dispatch(request).await;
    server.metrics.record(decision, &report);
    info!(
        %method,
        path,
        status = response.status().as_u16(),
        %decision,
        %report,
        "rewrite"
    );
    response
}
