//! A third-party tracker that tries every stateful trick the gateway is
//! meant to defeat: an identifying cookie, an ETag carrying the same
//! identifier, Last-Modified, long caching, and it records the Referer.
//!
//! One app is served on two ports so redirects can hop between two
//! distinct third-party origins.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use axum::body::Body;
use axum::extract::{Request, State};
use axum::http::header::{
    CACHE_CONTROL, CONTENT_TYPE, COOKIE, ETAG, HOST, IF_MODIFIED_SINCE, IF_NONE_MATCH, LAST_MODIFIED, LOCATION, ORIGIN,
    REFERER, SET_COOKIE, USER_AGENT,
};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::Response;
use axum::Router;
use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

pub const UID_COOKIE: &str = "uid";
pub const LAST_MODIFIED_VALUE: &str = "Wed, 21 Oct 2015 07:28:00 GMT";

/// What the tracker saw in one request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TrackerObservation {
    pub id: u64,
    pub session: String,
    /// `host:port` the request was addressed to.
    pub host: String,
    pub method: String,
    pub path: String,
    pub query: Vec<(String, String)>,
    /// Every header line as received, names lowercased.
    pub headers: Vec<(String, String)>,
    pub cookies: BTreeMap<String, String>,
    pub if_none_match: Option<String>,
    pub if_modified_since: Option<String>,
    pub referer: Option<String>,
    pub origin: Option<String>,
    pub user_agent: Option<String>,
    /// Identifier the tracker attached to its response.
    pub issued_uid: String,
    /// Milliseconds since the tracker started.
    pub timestamp_ms: u64,
}

impl TrackerObservation {
    pub fn header_names(&self) -> BTreeSet<&str> {
        self.headers.iter().map(|(n, _)| n.as_str()).collect()
    }
}

struct TrackerState {
    log: Mutex<Vec<TrackerObservation>>,
    issued: Mutex<BTreeSet<String>>,
    rng: Mutex<ChaCha8Rng>,
    session: Mutex<String>,
    started: Instant,
    secondary_origin: String,
}

pub struct Tracker {
    state: Arc<TrackerState>,
    primary: SocketAddr,
    secondary: SocketAddr,
    tasks: Vec<JoinHandle<()>>,
}

impl Tracker {
    pub async fn start(seed: u64) -> std::io::Result<Tracker> {
        let first = TcpListener::bind("127.0.0.1:0").await?;
        let second = TcpListener::bind("127.0.0.1:0").await?;
        let primary = first.local_addr()?;
        let secondary = second.local_addr()?;
        let state = Arc::new(TrackerState {
            log: Mutex::default(),
            issued: Mutex::default(),
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            session: Mutex::new(String::new()),
            started: Instant::now(),
            secondary_origin: format!("http://{secondary}"),
        });
        let app = Router::new().fallback(handle).with_state(state.clone());
        let tasks = [first, second]
            .into_iter()
            .map(|listener| {
                let app = app.clone();
                tokio::spawn(async move {
                    let _ = axum::serve(listener, app).await;
                })
            })
            .collect();
        Ok(Tracker { state, primary, secondary, tasks })
    }

    pub fn origin(&self) -> String {
        format!("http://{}", self.primary)
    }

    /// The second third-party origin, target of `/redirect`.
    pub fn secondary_origin(&self) -> String {
        format!("http://{}", self.secondary)
    }

    pub fn hosts(&self) -> [String; 2] {
        [self.primary.to_string(), self.secondary.to_string()]
    }

    /// Labels subsequent observations.
    pub fn set_session(&self, label: &str) {
        *self.state.session.lock().unwrap() = label.to_owned();
    }

    pub fn observations(&self) -> Vec<TrackerObservation> {
        self.state.log.lock().unwrap().clone()
    }
}

impl Drop for Tracker {
    fn drop(&mut self) {
        for task in &self.tasks {
            task.abort();
        }
    }
}

fn header(headers: &HeaderMap, name: impl axum::http::header::AsHeaderName) -> Option<String> {
    headers.get(name).and_then(|v| v.to_str().ok()).map(str::to_owned)
}

fn parse_cookies(headers: &HeaderMap) -> BTreeMap<String, String> {
    headers
        .get_all(COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(';'))
        .filter_map(|pair| {
            let (name, value) = pair.split_once('=')?;
            Some((name.trim().to_owned(), value.trim().to_owned()))
        })
        .collect()
}

fn content(path: &str, secondary_origin: &str) -> Option<(StatusCode, &'static str, Vec<u8>)> {
    let ok = |ty, body: &str| Some((StatusCode::OK, ty, body.as_bytes().to_vec()));
    match path {
        "/track.js" | "/landed.js" => ok("text/javascript", "/* tracker */ var tracked = true;\n"),
        "/pixel.png" | "/bg.png" | "/in-frame.png" => Some((StatusCode::OK, "image/png", b"\x89PNG\r\n\x1a\n".to_vec())),
        "/font.woff" => Some((StatusCode::OK, "font/woff", b"wOFF".to_vec())),
        "/style.css" => ok(
            "text/css",
            "@import \"imported.css\";\n@font-face { font-family: T; src: url(/font.woff) format(\"woff\") }\nbody { background: url(bg.png) }\n",
        ),
        "/imported.css" => ok("text/css", "p { color: #333 }\n"),
        "/frame.html" => ok(
            "text/html",
            "<!DOCTYPE html><html><head><title>ad</title></head><body><img src=\"/in-frame.png\" alt=\"\"></body></html>",
        ),
        "/redirect" => Some((StatusCode::MOVED_PERMANENTLY, "text/plain", format!("{secondary_origin}/landed.js").into_bytes())),
        _ => None,
    }
}

async fn handle(State(state): State<Arc<TrackerState>>, request: Request) -> Response {
    let headers = request.headers();
    let cookies = parse_cookies(headers);
    let if_none_match = header(headers, IF_NONE_MATCH);
    let etag_uid = if_none_match.as_deref().map(|v| v.trim().trim_matches('"').to_owned());

    // Reuse an identifier the client hands back, from either channel.
    let known = {
        let issued = state.issued.lock().unwrap();
        cookies
            .get(UID_COOKIE)
            .filter(|uid| issued.contains(*uid))
            .or(etag_uid.as_ref().filter(|uid| issued.contains(*uid)))
            .cloned()
    };
    let uid = known.clone().unwrap_or_else(|| format!("{:016x}", state.rng.lock().unwrap().next_u64()));
    state.issued.lock().unwrap().insert(uid.clone());

    let uri = request.uri();
    let query =
        uri.query().map(|q| url::form_urlencoded::parse(q.as_bytes()).into_owned().collect()).unwrap_or_default();
    {
        let mut log = state.log.lock().unwrap();
        let observation = TrackerObservation {
            id: log.len() as u64,
            session: state.session.lock().unwrap().clone(),
            host: header(headers, HOST).unwrap_or_default(),
            method: request.method().to_string(),
            path: uri.path().to_owned(),
            query,
            headers: headers
                .iter()
                .map(|(n, v)| (n.as_str().to_owned(), String::from_utf8_lossy(v.as_bytes()).into_owned()))
                .collect(),
            cookies,
            if_none_match: if_none_match.clone(),
            if_modified_since: header(headers, IF_MODIFIED_SINCE),
            referer: header(headers, REFERER),
            origin: header(headers, ORIGIN),
            user_agent: header(headers, USER_AGENT),
            issued_uid: uid.clone(),
            timestamp_ms: state.started.elapsed().as_millis() as u64,
        };
        log.push(observation);
    }

    let Some((mut status, content_type, body)) = content(uri.path(), &state.secondary_origin) else {
        let mut response = Response::new(Body::from("not found\n"));
        *response.status_mut() = StatusCode::NOT_FOUND;
        return response;
    };
    let etag = format!("\"{uid}\"");
    let mut response_body = Body::from(body.clone());
    if status == StatusCode::OK && known.is_some() && if_none_match.as_deref() == Some(etag.as_str()) {
        status = StatusCode::NOT_MODIFIED;
        response_body = Body::empty();
    }
    let mut response = Response::new(response_body);
    *response.status_mut() = status;
    let out = response.headers_mut();
    let value = |s: &str| HeaderValue::from_str(s).expect("tracker header values are ASCII");
    out.insert(CONTENT_TYPE, value(content_type));
    out.insert(SET_COOKIE, value(&format!("{UID_COOKIE}={uid}; Path=/; Max-Age=31536000")));
    out.insert(ETAG, value(&etag));
    out.insert(LAST_MODIFIED, value(LAST_MODIFIED_VALUE));
    out.insert(CACHE_CONTROL, value("private, max-age=31536000"));
    if status == StatusCode::MOVED_PERMANENTLY {
        out.insert(LOCATION, value(std::str::from_utf8(&body).expect("redirect body is the location")));
    }
    response
}
