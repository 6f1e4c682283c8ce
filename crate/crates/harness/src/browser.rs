//! A scripted stand-in for a browser. It has no JavaScript engine, but it
//! reproduces the request headers a browser would send: per-origin
//! cookies, Referer under the default referrer policy, cache validators on
//! reload, and it loads the subresources named in HTML and CSS.
//!
//! A second visit behaves like a reload: every URL fetched before is
//! revalidated with `Cache-Control: max-age=0` plus any stored validators.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::sync::LazyLock;
use std::time::Duration;

use axum::http::header::{
    ACCEPT, CACHE_CONTROL, CONTENT_TYPE, COOKIE, ETAG, IF_MODIFIED_SINCE, IF_NONE_MATCH, LAST_MODIFIED, LOCATION,
    REFERER, REFERRER_POLICY, SET_COOKIE, USER_AGENT,
};
use axum::http::{HeaderMap, HeaderValue};
use gateway_core::Origin;
use gateway_server::TRAMPOLINE_SCRIPT;
use regex::Regex;
use scraper::{Html, Selector};
use serde::Serialize;
use url::Url;

pub const BROWSER_USER_AGENT: &str = "Mozilla/5.0 (X11; Linux x86_64) HarnessBrowser/1.0";
const MAX_REDIRECTS: usize = 5;
const MAX_DEPTH: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum BrowserError {
    #[error("invalid URL: {0}")]
    Url(#[from] url::ParseError),
    #[error(transparent)]
    Client(#[from] reqwest::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Initiator {
    Navigation,
    Frame,
    Script,
    Image,
    Stylesheet,
    CssResource,
}

impl Initiator {
    fn accept(self) -> &'static str {
        match self {
            Initiator::Navigation | Initiator::Frame => "text/html,application/xhtml+xml;q=0.9,*/*;q=0.8",
            Initiator::Stylesheet => "text/css,*/*;q=0.1",
            Initiator::Image => "image/avif,image/webp,image/png,*/*;q=0.8",
            Initiator::Script | Initiator::CssResource => "*/*",
        }
    }

    fn is_document(self) -> bool {
        matches!(self, Initiator::Navigation | Initiator::Frame)
    }
}

/// One HTTP exchange, including each redirect hop.
#[derive(Debug, Clone, Serialize)]
pub struct FetchRecord {
    pub id: usize,
    pub visit: usize,
    pub initiator: Initiator,
    pub url: String,
    /// `None` when the request failed before a response arrived.
    pub status: Option<u16>,
    pub request_headers: Vec<(String, String)>,
    pub response_headers: Vec<(String, String)>,
    pub error: Option<String>,
}

impl FetchRecord {
    pub fn response_header<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.response_headers.iter().filter(move |(n, _)| n == name).map(|(_, v)| v.as_str())
    }

    pub fn request_header(&self, name: &str) -> Option<&str> {
        self.request_headers.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_str())
    }

    pub fn origin(&self) -> Option<Origin> {
        Url::parse(&self.url).ok().as_ref().and_then(Origin::of)
    }
}

struct Task {
    url: Url,
    /// Document or stylesheet that referenced this URL.
    referrer: Option<Url>,
    initiator: Initiator,
    depth: usize,
}

struct Loaded {
    url: Url,
    headers: HeaderMap,
    body: Vec<u8>,
}

#[derive(Default, Clone)]
struct Validators {
    etag: Option<String>,
    last_modified: Option<String>,
}

pub struct EmulatedBrowser {
    client: reqwest::Client,
    jar: HashMap<Origin, BTreeMap<String, String>>,
    validators: HashMap<String, Validators>,
    /// Last 200 body per URL with its Content-Type, replayed on 304.
    cache: HashMap<String, (Option<HeaderValue>, Vec<u8>)>,
    seen: HashSet<String>,
    visits: usize,
    log: Vec<FetchRecord>,
}

static CSS_REFERENCE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?is)/\*.*?\*/|(@import\s+)?url\(\s*(?:"([^"]*)"|'([^']*)'|([^)"'\s]*))\s*\)|@import\s+(?:"([^"]*)"|'([^']*)')"#)
        .expect("static regex")
});

fn selector(s: &str) -> Selector {
    Selector::parse(s).expect("static selector")
}

/// Referer value under `strict-origin-when-cross-origin`, the browser
/// default: the full URL same-origin, the bare origin cross-origin.
fn referer_value(referrer: &Url, target: &Url) -> Option<String> {
    if referrer.scheme() == "https" && target.scheme() == "http" {
        return None;
    }
    let mut full = referrer.clone();
    full.set_fragment(None);
    let _ = full.set_username("");
    let _ = full.set_password(None);
    if Origin::of(referrer) == Origin::of(target) {
        Some(full.into())
    } else {
        Origin::of(referrer).map(|o| format!("{o}/"))
    }
}

fn header_pairs(headers: &HeaderMap) -> Vec<(String, String)> {
    headers.iter().map(|(n, v)| (n.as_str().to_owned(), String::from_utf8_lossy(v.as_bytes()).into_owned())).collect()
}

fn no_referrer_policy(headers: &HeaderMap) -> bool {
    headers
        .get_all(REFERRER_POLICY)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(','))
        .any(|token| token.trim().eq_ignore_ascii_case("no-referrer"))
}

fn is_trampoline_script(text: &str) -> bool {
    let squash = |s: &str| s.split_whitespace().collect::<String>();
    squash(text) == squash(TRAMPOLINE_SCRIPT)
}

impl EmulatedBrowser {
    pub fn new() -> Result<Self, BrowserError> {
        let client = reqwest::Client::builder()
            .redirect(reqwest::redirect::Policy::none())
            .timeout(Duration::from_secs(10))
            .build()?;
        Ok(EmulatedBrowser {
            client,
            jar: HashMap::new(),
            validators: HashMap::new(),
            cache: HashMap::new(),
            seen: HashSet::new(),
            visits: 0,
            log: Vec::new(),
        })
    }

    /// Plants a cookie as if an earlier session had received it.
    pub fn seed_cookie(&mut self, url: &str, name: &str, value: &str) -> Result<(), BrowserError> {
        let origin = Origin::of(&Url::parse(url)?).ok_or(url::ParseError::EmptyHost)?;
        self.jar.entry(origin).or_default().insert(name.to_owned(), value.to_owned());
        Ok(())
    }

    /// Plants cache validators for `url` as if it had been fetched before.
    pub fn seed_validators(&mut self, url: &str, etag: &str, last_modified: &str) -> Result<(), BrowserError> {
        let url = Url::parse(url)?;
        self.validators.insert(
            url.to_string(),
            Validators { etag: Some(etag.to_owned()), last_modified: Some(last_modified.to_owned()) },
        );
        self.seen.insert(url.to_string());
        Ok(())
    }

    pub fn cookies(&self, origin: &Origin) -> Option<&BTreeMap<String, String>> {
        self.jar.get(origin)
    }

    pub fn fetches(&self) -> &[FetchRecord] {
        &self.log
    }

    pub fn into_fetches(self) -> Vec<FetchRecord> {
        self.log
    }

    /// Navigates the top-level window to `url` and loads everything the
    /// page references.
    pub async fn visit(&mut self, url: &str) -> Result<(), BrowserError> {
        let url = Url::parse(url)?;
        self.visits += 1;
        let first = self.log.len();
        let mut queue = VecDeque::from([Task { url, referrer: None, initiator: Initiator::Navigation, depth: 0 }]);
        while let Some(task) = queue.pop_front() {
            let Some(loaded) = self.fetch(&task.url, task.referrer.as_ref(), task.initiator).await else {
                continue;
            };
            if task.depth >= MAX_DEPTH {
                continue;
            }
            let essence = loaded
                .headers
                .get(CONTENT_TYPE)
                .and_then(|v| v.to_str().ok())
                .map(|v| v.split(';').next().unwrap_or("").trim().to_ascii_lowercase())
                .unwrap_or_default();
            let referrer = (!no_referrer_policy(&loaded.headers)).then(|| loaded.url.clone());
            if task.initiator.is_document() && essence == "text/html" {
                self.document_tasks(&loaded, referrer, task.initiator, task.depth, &mut queue);
            } else if matches!(task.initiator, Initiator::Stylesheet) && essence == "text/css" {
                let text = String::from_utf8_lossy(&loaded.body);
                for (url, import) in css_references(&text, &loaded.url) {
                    let initiator = if import { Initiator::Stylesheet } else { Initiator::CssResource };
                    queue.push_back(Task { url, referrer: referrer.clone(), initiator, depth: task.depth + 1 });
                }
            }
        }
        let fetched: Vec<String> = self.log[first..].iter().map(|r| r.url.clone()).collect();
        self.seen.extend(fetched);
        Ok(())
    }

    fn document_tasks(
        &self,
        loaded: &Loaded,
        referrer: Option<Url>,
        initiator: Initiator,
        depth: usize,
        queue: &mut VecDeque<Task>,
    ) {
        let html = Html::parse_document(&String::from_utf8_lossy(&loaded.body));
        let base = html
            .select(&selector("base[href]"))
            .next()
            .and_then(|b| loaded.url.join(b.attr("href")?).ok())
            .unwrap_or_else(|| loaded.url.clone());

        // The trampoline clicks its only anchor. Framed, it navigates the
        // frame; top-level, it opens a new window. `rel=noreferrer` means
        // neither carries a Referer.
        let trampoline =
            html.select(&selector("script:not([src])")).any(|s| is_trampoline_script(&s.text().collect::<String>()));
        if trampoline {
            let anchors: Vec<_> = html.select(&selector("a[href]")).collect();
            if let [anchor] = anchors.as_slice() {
                if let Some(url) = anchor.attr("href").and_then(|h| base.join(h).ok()) {
                    queue.push_back(Task { url, referrer: None, initiator, depth: depth + 1 });
                }
            }
            return;
        }

        for element in html.select(&selector("script[src], link[href], img[src], iframe[src], frame[src]")) {
            let value = element.value();
            let (attr, initiator) = match value.name() {
                "script" => ("src", Initiator::Script),
                "img" => ("src", Initiator::Image),
                "iframe" | "frame" => ("src", Initiator::Frame),
                _ => {
                    let stylesheet = value
                        .attr("rel")
                        .is_some_and(|rel| rel.split_ascii_whitespace().any(|t| t.eq_ignore_ascii_case("stylesheet")));
                    if !stylesheet {
                        continue;
                    }
                    ("href", Initiator::Stylesheet)
                }
            };
            let Some(url) = value.attr(attr).and_then(|v| base.join(v.trim()).ok()) else {
                continue;
            };
            if matches!(url.scheme(), "http" | "https") {
                queue.push_back(Task { url, referrer: referrer.clone(), initiator, depth: depth + 1 });
            }
        }
    }

    fn request_headers(&self, url: &Url, referrer: Option<&Url>, initiator: Initiator) -> HeaderMap {
        let mut headers = HeaderMap::new();
        let mut put = |name, value: &str| {
            if let Ok(value) = HeaderValue::from_str(value) {
                headers.append(name, value);
            }
        };
        put(USER_AGENT, BROWSER_USER_AGENT);
        put(ACCEPT, initiator.accept());
        if let Some(referer) = referrer.and_then(|r| referer_value(r, url)) {
            put(REFERER, &referer);
        }
        if let Some(cookies) = Origin::of(url).and_then(|o| self.jar.get(&o)).filter(|c| !c.is_empty()) {
            let line = cookies.iter().map(|(n, v)| format!("{n}={v}")).collect::<Vec<_>>().join("; ");
            put(COOKIE, &line);
        }
        if self.seen.contains(url.as_str()) {
            put(CACHE_CONTROL, "max-age=0");
            if let Some(v) = self.validators.get(url.as_str()) {
                if let Some(etag) = &v.etag {
                    put(IF_NONE_MATCH, etag);
                }
                if let Some(date) = &v.last_modified {
                    put(IF_MODIFIED_SINCE, date);
                }
            }
        }
        headers
    }

    fn store(&mut self, url: &Url, headers: &HeaderMap) {
        if let Some(origin) = Origin::of(url) {
            for line in headers.get_all(SET_COOKIE).iter().filter_map(|v| v.to_str().ok()) {
                let pair = line.split(';').next().unwrap_or("");
                if let Some((name, value)) = pair.split_once('=') {
                    self.jar.entry(origin.clone()).or_default().insert(name.trim().to_owned(), value.trim().to_owned());
                }
            }
        }
        let text = |name| headers.get(name).and_then(|v: &HeaderValue| v.to_str().ok()).map(str::to_owned);
        let (etag, last_modified) = (text(ETAG), text(LAST_MODIFIED));
        if etag.is_some() || last_modified.is_some() {
            self.validators.insert(url.to_string(), Validators { etag, last_modified });
        }
    }

    /// Fetches `url`, following redirects, and records every hop.
    async fn fetch(&mut self, url: &Url, referrer: Option<&Url>, initiator: Initiator) -> Option<Loaded> {
        let mut url = url.clone();
        for _ in 0..=MAX_REDIRECTS {
            let request_headers = self.request_headers(&url, referrer, initiator);
            let mut record = FetchRecord {
                id: self.log.len(),
                visit: self.visits,
                initiator,
                url: url.to_string(),
                status: None,
                request_headers: header_pairs(&request_headers),
                response_headers: Vec::new(),
                error: None,
            };
            let response = self.client.get(url.clone()).headers(request_headers).send().await;
            let response = match response {
                Ok(response) => response,
                Err(err) => {
                    record.error = Some(err.to_string());
                    self.log.push(record);
                    return None;
                }
            };
            let status = response.status();
            let headers = response.headers().clone();
            record.status = Some(status.as_u16());
            record.response_headers = header_pairs(&headers);
            let body = match response.bytes().await {
                Ok(body) => body.to_vec(),
                Err(err) => {
                    record.error = Some(err.to_string());
                    self.log.push(record);
                    return None;
                }
            };
            self.log.push(record);
            self.store(&url, &headers);

            if status.is_redirection() && status.as_u16() != 304 {
                let next = headers.get(LOCATION).and_then(|v| v.to_str().ok()).and_then(|l| url.join(l).ok())?;
                url = next;
                continue;
            }
            let mut headers = headers;
            let body = if status.as_u16() == 304 {
                let (content_type, body) = self.cache.get(url.as_str()).cloned().unwrap_or_default();
                if let Some(content_type) = content_type {
                    headers.entry(CONTENT_TYPE).or_insert(content_type);
                }
                body
            } else {
                if status.is_success() {
                    self.cache.insert(url.to_string(), (headers.get(CONTENT_TYPE).cloned(), body.clone()));
                }
                body
            };
            return Some(Loaded { url, headers, body });
        }
        None
    }
}

/// Absolute URLs referenced by a stylesheet; `true` marks `@import`.
fn css_references(css: &str, base: &Url) -> Vec<(Url, bool)> {
    CSS_REFERENCE
        .captures_iter(css)
        .filter_map(|c| {
            let import = c.get(1).is_some() || c.get(5).is_some() || c.get(6).is_some();
            let raw = (2..=6).find_map(|i| c.get(i))?.as_str().trim();
            if raw.is_empty() {
                return None;
            }
            let url = base.join(raw).ok()?;
            matches!(url.scheme(), "http" | "https").then_some((url, import))
        })
        .collect()
}
