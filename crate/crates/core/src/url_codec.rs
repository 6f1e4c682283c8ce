//! Encapsulation of third-party URLs into middle-party URLs.
//!
//! A third-party URL `http://third.com/script.js` referenced by a page is
//! rewritten to `http://middle.com/?src=http%3A%2F%2Fthird.com%2Fscript.js`
//! (in-context content) or `http://middle.com/?emb=...` (cross-context
//! content). The middle party reverses the mapping with [`decode`].

use std::fmt;
use std::str::FromStr;

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};
use serde::{Deserialize, Serialize};
use url::Url;

/// Query parameter carrying an in-context target.
pub const IN_CONTEXT_PARAM: &str = "src";
/// Query parameter carrying a cross-context target.
pub const CROSS_CONTEXT_PARAM: &str = "emb";

/// Everything but the RFC 3986 unreserved set is escaped.
const TARGET_ENCODE_SET: &AsciiSet = &NON_ALPHANUMERIC.remove(b'-').remove(b'.').remove(b'_').remove(b'~');

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("unparsable URL {0:?}")]
    UnparsableUrl(String),
    #[error("bad encapsulation: {0}")]
    BadEncapsulation(&'static str),
    #[error("encapsulated target points back at the middle party")]
    LoopDetected,
    #[error("invalid origin {0:?}")]
    InvalidOrigin(String),
    #[error("first party and middle party must have different origins")]
    SameOrigin,
}

/// Scheme, host and port. Default ports are normalized away when
/// serializing, so `http://a.com:80` and `http://a.com` are equal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Origin {
    scheme: String,
    host: String,
    port: u16,
}

impl Origin {
    /// Origin of an http(s) URL; `None` for every other scheme.
    pub fn of(url: &Url) -> Option<Origin> {
        match url.scheme() {
            "http" | "https" => Some(Origin {
                scheme: url.scheme().to_owned(),
                host: url.host_str()?.to_owned(),
                port: url.port_or_known_default()?,
            }),
            _ => None,
        }
    }

    pub fn scheme(&self) -> &str {
        &self.scheme
    }

    pub fn host(&self) -> &str {
        &self.host
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    fn default_port(&self) -> u16 {
        if self.scheme == "https" {
            443
        } else {
            80
        }
    }

    /// The origin as a URL with path `/`.
    pub fn to_url(&self) -> Url {
        Url::parse(&format!("{self}/")).expect("origin always serializes to a valid URL")
    }
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}://{}", self.scheme, self.host)?;
        if self.port != self.default_port() {
            write!(f, ":{}", self.port)?;
        }
        Ok(())
    }
}

impl FromStr for Origin {
    type Err = CodecError;

    /// Accepts `scheme://host[:port]` with an optional trailing `/`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let invalid = || CodecError::InvalidOrigin(s.to_owned());
        let url = Url::parse(s).map_err(|_| invalid())?;
        if url.path() != "/" || url.query().is_some() || url.fragment().is_some() {
            return Err(invalid());
        }
        if !url.username().is_empty() || url.password().is_some() {
            return Err(invalid());
        }
        Origin::of(&url).ok_or_else(invalid)
    }
}

impl Serialize for Origin {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Origin {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The two origins the gateway operates on, plus extra origins treated as
/// first party (e.g. `static.mysite.com`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OriginSet {
    first_party: Origin,
    middle_party: Origin,
    first_party_allowlist: Vec<Origin>,
}

impl OriginSet {
    pub fn new(first_party: Origin, middle_party: Origin) -> Result<Self, CodecError> {
        Self::with_allowlist(first_party, middle_party, Vec::new())
    }

    pub fn with_allowlist(
        first_party: Origin,
        middle_party: Origin,
        first_party_allowlist: Vec<Origin>,
    ) -> Result<Self, CodecError> {
        if first_party == middle_party || first_party_allowlist.contains(&middle_party) {
            return Err(CodecError::SameOrigin);
        }
        Ok(OriginSet { first_party, middle_party, first_party_allowlist })
    }

    pub fn first_party(&self) -> &Origin {
        &self.first_party
    }

    pub fn middle_party(&self) -> &Origin {
        &self.middle_party
    }

    pub fn first_party_allowlist(&self) -> &[Origin] {
        &self.first_party_allowlist
    }

    fn is_first_party(&self, origin: &Origin) -> bool {
        *origin == self.first_party || self.first_party_allowlist.contains(origin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UrlClass {
    FirstParty,
    MiddleParty,
    ThirdParty,
    NonHttp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextKind {
    /// Runs inside the embedding page: scripts, images, styles, forms.
    InContext,
    /// Gets its own browsing context: frames, popups, plugin objects.
    CrossContext,
}

impl ContextKind {
    pub fn param(self) -> &'static str {
        match self {
            ContextKind::InContext => IN_CONTEXT_PARAM,
            ContextKind::CrossContext => CROSS_CONTEXT_PARAM,
        }
    }
}

/// A third-party target together with the context it will be loaded in.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProxiedUrl {
    target: Url,
    kind: ContextKind,
}

impl ProxiedUrl {
    /// Fragments never reach a server and are dropped.
    pub fn new(mut target: Url, kind: ContextKind) -> Result<Self, CodecError> {
        if !matches!(target.scheme(), "http" | "https") || target.host_str().is_none() {
            return Err(CodecError::BadEncapsulation("target is not an absolute http(s) URL"));
        }
        target.set_fragment(None);
        Ok(ProxiedUrl { target, kind })
    }

    pub fn target(&self) -> &Url {
        &self.target
    }

    pub fn kind(&self) -> ContextKind {
        self.kind
    }

    pub fn into_target(self) -> Url {
        self.target
    }
}

/// Resolves `url` against `base` and returns the absolute URL with its class.
pub fn resolve(url: &str, base: &Url, origins: &OriginSet) -> Result<(Url, UrlClass), CodecError> {
    let resolved = base.join(url).map_err(|_| CodecError::UnparsableUrl(url.to_owned()))?;
    let class = match Origin::of(&resolved) {
        None => UrlClass::NonHttp,
        Some(origin) if origin == origins.middle_party => UrlClass::MiddleParty,
        Some(origin) if origins.is_first_party(&origin) => UrlClass::FirstParty,
        Some(_) => UrlClass::ThirdParty,
    };
    Ok((resolved, class))
}

/// Classifies a possibly relative URL after resolving it against `base`.
pub fn classify(url: &str, base: &Url, origins: &OriginSet) -> Result<UrlClass, CodecError> {
    resolve(url, base, origins).map(|(_, class)| class)
}

/// `<middle>/?src=<pct(target)>` or `<middle>/?emb=<pct(target)>`.
pub fn encode(proxied: &ProxiedUrl, origins: &OriginSet) -> Url {
    let encoded = format!(
        "{}/?{}={}",
        origins.middle_party,
        proxied.kind.param(),
        utf8_percent_encode(proxied.target.as_str(), TARGET_ENCODE_SET)
    );
    Url::parse(&encoded).expect("middle origin plus percent-encoded query is a valid URL")
}

/// Reverses [`encode`].
pub fn decode(url: &Url, origins: &OriginSet) -> Result<ProxiedUrl, CodecError> {
    if Origin::of(url).as_ref() != Some(&origins.middle_party) {
        return Err(CodecError::BadEncapsulation("not a middle-party URL"));
    }
    let mut found: Option<(ContextKind, &str)> = None;
    for pair in url.query().unwrap_or("").split('&') {
        let (key, value) = pair.split_once('=').unwrap_or((pair, ""));
        let kind = match key {
            IN_CONTEXT_PARAM => ContextKind::InContext,
            CROSS_CONTEXT_PARAM => ContextKind::CrossContext,
            _ => continue,
        };
        if found.is_some() {
            return Err(CodecError::BadEncapsulation("more than one target parameter"));
        }
        found = Some((kind, value));
    }
    let (kind, raw) = found.ok_or(CodecError::BadEncapsulation("no src or emb parameter"))?;
    let decoded =
        percent_decode_str(raw).decode_utf8().map_err(|_| CodecError::BadEncapsulation("target is not valid UTF-8"))?;
    let target = Url::parse(&decoded).map_err(|_| CodecError::BadEncapsulation("target is not an absolute URL"))?;
    let proxied = ProxiedUrl::new(target, kind)?;
    if Origin::of(&proxied.target).as_ref() == Some(&origins.middle_party) {
        return Err(CodecError::LoopDetected);
    }
    Ok(proxied)
}
