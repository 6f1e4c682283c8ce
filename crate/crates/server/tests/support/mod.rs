#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::Request;
use axum::http::{HeaderMap, Method};
use axum::Router;
use gateway_core::{GatewayConfig, Origin};
use tokio::net::TcpListener;
use url::Url;

pub const FIRST_PARTY: &str = "http://mysite.com";
pub const MIDDLE_PARTY: &str = "http://middle.com";

pub async fn spawn(app: Router) -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    addr
}

/// A local port with nothing listening on it.
pub async fn closed_port() -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    listener.local_addr().unwrap()
}

pub fn config(upstream: SocketAddr) -> GatewayConfig {
    GatewayConfig::new(
        "127.0.0.1:1".parse().unwrap(),
        Url::parse(&format!("http://{upstream}")).unwrap(),
        FIRST_PARTY.parse::<Origin>().unwrap(),
        MIDDLE_PARTY.parse::<Origin>().unwrap(),
    )
}

#[derive(Debug, Clone)]
pub struct Captured {
    pub method: Method,
    pub uri: String,
    pub headers: HeaderMap,
    pub body: Bytes,
}

/// Requests seen by a mock upstream.
#[derive(Debug, Clone, Default)]
pub struct Capture(Arc<Mutex<Vec<Captured>>>);

impl Capture {
    pub fn all(&self) -> Vec<Captured> {
        self.0.lock().unwrap().clone()
    }

    pub fn last(&self) -> Captured {
        self.all().pop().expect("upstream saw no request")
    }

    pub fn len(&self) -> usize {
        self.0.lock().unwrap().len()
    }

    /// Layer recording every request before it reaches the routes.
    pub fn record(&self, router: Router) -> Router {
        let capture = self.clone();
        router.layer(axum::middleware::from_fn(move |request: Request, next: axum::middleware::Next| {
            let capture = capture.clone();
            async move {
                let (parts, body) = request.into_parts();
                let body = axum::body::to_bytes(body, usize::MAX).await.unwrap();
                capture.0.lock().unwrap().push(Captured {
                    method: parts.method.clone(),
                    uri: parts.uri.to_string(),
                    headers: parts.headers.clone(),
                    body: body.clone(),
                });
                next.run(Request::from_parts(parts, axum::body::Body::from(body))).await
            }
        }))
    }
}

pub fn client() -> reqwest::Client {
    reqwest::Client::builder().redirect(reqwest::redirect::Policy::none()).build().unwrap()
}
