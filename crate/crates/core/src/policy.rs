//! Header strip lists, Location rewriting and the CSP builder.

use std::fmt;
use std::str::FromStr;

use http::header::{HeaderName, HeaderValue, LOCATION};
use serde::{Deserialize, Serialize};

use crate::url_codec::{encode, resolve, OriginSet, ProxiedUrl, UrlClass};

/// Request headers that carry user recognition or website identification.
pub const REQUEST_STRIP_MINIMUM: &[&str] =
    &["cookie", "referer", "if-modified-since", "if-none-match", "if-match", "cache-control", "user-agent"];

/// Response headers that set client-side state.
pub const RESPONSE_STRIP_MINIMUM: &[&str] = &["set-cookie", "etag", "last-modified", "cache-control"];

pub const GENERIC_USER_AGENT: &str = "Mozilla/5.0 (compatible; PrivacyGateway/1.0)";

/// An ordered header multimap. Unlike `http::HeaderMap` it keeps the exact
/// interleaving of names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HeaderList(Vec<(HeaderName, HeaderValue)>);

impl HeaderList {
    pub fn new() -> Self {
        HeaderList(Vec::new())
    }

    pub fn push(&mut self, name: HeaderName, value: HeaderValue) {
        self.0.push((name, value));
    }

    /// Panics on invalid names or values; meant for literals.
    pub fn with(mut self, name: &str, value: &str) -> Self {
        self.push(
            HeaderName::from_bytes(name.as_bytes()).expect("valid header name"),
            HeaderValue::from_str(value).expect("valid header value"),
        );
        self
    }

    pub fn get(&self, name: &str) -> Option<&HeaderValue> {
        self.0.iter().find(|(n, _)| n.as_str().eq_ignore_ascii_case(name)).map(|(_, v)| v)
    }

    pub fn get_all<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a HeaderValue> + 'a {
        self.0.iter().filter(move |(n, _)| n.as_str().eq_ignore_ascii_case(name)).map(|(_, v)| v)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn remove_all(&mut self, name: &str) -> usize {
        let before = self.0.len();
        self.0.retain(|(n, _)| !n.as_str().eq_ignore_ascii_case(name));
        before - self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&HeaderName, &HeaderValue)> {
        self.0.iter().map(|(n, v)| (n, v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_header_map(&self) -> http::HeaderMap {
        let mut map = http::HeaderMap::with_capacity(self.0.len());
        for (name, value) in &self.0 {
            map.append(name.clone(), value.clone());
        }
        map
    }
}

impl From<&http::HeaderMap> for HeaderList {
    fn from(map: &http::HeaderMap) -> Self {
        HeaderList(map.iter().map(|(n, v)| (n.clone(), v.clone())).collect())
    }
}

impl FromIterator<(HeaderName, HeaderValue)> for HeaderList {
    fn from_iter<I: IntoIterator<Item = (HeaderName, HeaderValue)>>(iter: I) -> Self {
        HeaderList(iter.into_iter().collect())
    }
}

impl IntoIterator for HeaderList {
    type Item = (HeaderName, HeaderValue);
    type IntoIter = std::vec::IntoIter<(HeaderName, HeaderValue)>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.into_iter()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StripOutcome {
    pub headers: HeaderList,
    /// One entry per removed header line.
    pub removed: Vec<HeaderName>,
    /// Headers whose value was replaced rather than dropped.
    pub replaced: Vec<HeaderName>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingPolicy {
    pub request_strip: Vec<String>,
    pub response_strip: Vec<String>,
    /// Adds `Referrer-Policy: no-referrer` to content served through the
    /// middle party so it does not leak the middle URL onward.
    pub strip_referer_outbound: bool,
    pub rewrite_location: bool,
    /// When set, `User-Agent` is overwritten with this value instead of
    /// being dropped.
    pub generic_user_agent: Option<String>,
    /// Also strip the `Origin` request header. Off by default since CORS
    /// depends on it.
    pub drop_origin: bool,
    /// Append `Cache-Control: no-store` to sanitized responses.
    pub response_no_store: bool,
}

impl Default for TrackingPolicy {
    fn default() -> Self {
        TrackingPolicy {
            request_strip: REQUEST_STRIP_MINIMUM.iter().map(|s| s.to_string()).collect(),
            response_strip: RESPONSE_STRIP_MINIMUM.iter().map(|s| s.to_string()).collect(),
            strip_referer_outbound: true,
            rewrite_location: true,
            generic_user_agent: Some(GENERIC_USER_AGENT.to_owned()),
            drop_origin: false,
            response_no_store: false,
        }
    }
}

fn contains_name(list: &[String], name: &str) -> bool {
    list.iter().any(|n| n.eq_ignore_ascii_case(name))
}

fn union_into(list: &mut Vec<String>, minimum: &[&str]) {
    for name in minimum {
        if !contains_name(list, name) {
            list.push((*name).to_owned());
        }
    }
}

impl TrackingPolicy {
    /// Strip lists can be extended from config but never shrunk below the
    /// built-in minimum.
    pub fn normalized(mut self) -> Self {
        union_into(&mut self.request_strip, REQUEST_STRIP_MINIMUM);
        union_into(&mut self.response_strip, RESPONSE_STRIP_MINIMUM);
        self
    }

    fn strips_request(&self, name: &str) -> bool {
        contains_name(&self.request_strip, name) || (self.drop_origin && name.eq_ignore_ascii_case("origin"))
    }

    fn strips_response(&self, name: &str) -> bool {
        contains_name(&self.response_strip, name)
    }

    pub fn strip_request_headers(&self, headers: &HeaderList) -> StripOutcome {
        let mut out = StripOutcome::default();
        for (name, value) in headers.iter() {
            if name == http::header::USER_AGENT && self.strips_request(name.as_str()) {
                if let Some(ua) = self.generic_user_agent.as_deref().and_then(|ua| HeaderValue::from_str(ua).ok()) {
                    out.headers.push(name.clone(), ua);
                    out.replaced.push(name.clone());
                    continue;
                }
            }
            if self.strips_request(name.as_str()) {
                out.removed.push(name.clone());
            } else {
                out.headers.push(name.clone(), value.clone());
            }
        }
        out
    }

    /// `request` is the decapsulated target the response belongs to; relative
    /// `Location` values resolve against it and rewritten ones keep its kind.
    pub fn strip_response_headers(
        &self,
        headers: &HeaderList,
        origins: &OriginSet,
        request: &ProxiedUrl,
    ) -> StripOutcome {
        let mut out = StripOutcome::default();
        for (name, value) in headers.iter() {
            if self.strips_response(name.as_str()) {
                out.removed.push(name.clone());
                continue;
            }
            if *name == LOCATION && self.rewrite_location {
                match self.rewrite_location_value(value, origins, request) {
                    Some(v) => out.headers.push(name.clone(), v),
                    None => out.removed.push(name.clone()),
                }
                continue;
            }
            out.headers.push(name.clone(), value.clone());
        }
        if self.response_no_store {
            out.headers.push(http::header::CACHE_CONTROL, HeaderValue::from_static("no-store"));
        }
        out
    }

    /// `None` means the header must be dropped (fail closed).
    fn rewrite_location_value(
        &self,
        value: &HeaderValue,
        origins: &OriginSet,
        request: &ProxiedUrl,
    ) -> Option<HeaderValue> {
        let raw = value.to_str().ok()?;
        let (resolved, class) = resolve(raw.trim(), request.target(), origins).ok()?;
        match class {
            UrlClass::ThirdParty => {
                let proxied = ProxiedUrl::new(resolved, request.kind()).ok()?;
                HeaderValue::from_str(encode(&proxied, origins).as_str()).ok()
            }
            UrlClass::FirstParty | UrlClass::MiddleParty => Some(value.clone()),
            UrlClass::NonHttp => None,
        }
    }
}

/// A CSP source expression. Wildcards are not representable.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CspSource {
    SelfOrigin,
    None,
    /// Stands for the configured middle-party origin.
    MiddleOrigin,
    Host(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid CSP source {0:?}")]
pub struct CspSourceError(String);

impl FromStr for CspSource {
    type Err = CspSourceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "'self'" => Ok(CspSource::SelfOrigin),
            "'none'" => Ok(CspSource::None),
            "middle-origin" => Ok(CspSource::MiddleOrigin),
            _ if s.is_empty() || s.contains(['*', '\'', ';', ',', '"']) || s.chars().any(char::is_whitespace) => {
                Err(CspSourceError(s.to_owned()))
            }
            _ => Ok(CspSource::Host(s.to_owned())),
        }
    }
}

impl fmt::Display for CspSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CspSource::SelfOrigin => f.write_str("'self'"),
            CspSource::None => f.write_str("'none'"),
            CspSource::MiddleOrigin => f.write_str("middle-origin"),
            CspSource::Host(h) => f.write_str(h),
        }
    }
}

impl Serialize for CspSource {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CspSource {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        String::deserialize(deserializer)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CspDirectives {
    pub default_src: Vec<CspSource>,
    pub object_src: Vec<CspSource>,
    pub frame_ancestors: Option<Vec<CspSource>>,
}

impl Default for CspDirectives {
    fn default() -> Self {
        CspDirectives {
            default_src: vec![CspSource::SelfOrigin, CspSource::MiddleOrigin],
            object_src: vec![CspSource::SelfOrigin],
            frame_ancestors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CspConfigError {
    #[error("default-src must be exactly 'self' and the middle origin")]
    DefaultSrc,
    #[error("{0} must not be empty")]
    Empty(&'static str),
}

impl CspDirectives {
    pub fn validate(&self) -> Result<(), CspConfigError> {
        let expected = [CspSource::SelfOrigin, CspSource::MiddleOrigin];
        if self.default_src.len() != 2 || !expected.iter().all(|s| self.default_src.contains(s)) {
            return Err(CspConfigError::DefaultSrc);
        }
        if self.object_src.is_empty() {
            return Err(CspConfigError::Empty("object-src"));
        }
        if matches!(&self.frame_ancestors, Some(v) if v.is_empty()) {
            return Err(CspConfigError::Empty("frame-ancestors"));
        }
        Ok(())
    }
}

fn write_directive(out: &mut String, name: &str, sources: &[CspSource], origins: &OriginSet) {
    if !out.is_empty() {
        out.push_str("; ");
    }
    out.push_str(name);
    for source in sources {
        out.push(' ');
        match source {
            CspSource::MiddleOrigin => out.push_str(&origins.middle_party().to_string()),
            other => out.push_str(&other.to_string()),
        }
    }
}

/// Serializes the policy for the `Content-Security-Policy` header.
pub fn build_csp(origins: &OriginSet, directives: &CspDirectives) -> String {
    let mut out = String::new();
    write_directive(&mut out, "default-src", &directives.default_src, origins);
    write_directive(&mut out, "object-src", &directives.object_src, origins);
    if let Some(ancestors) = &directives.frame_ancestors {
        write_directive(&mut out, "frame-ancestors", ancestors, origins);
    }
    out
}
