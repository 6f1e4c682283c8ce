//! Gateway configuration shared by the rewrite server and the middle party.
//!
//! The on-disk format is JSON; see `docs/config.schema.json` for the schema.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use url::Url;

use crate::html::{default_rules, TagRule};
use crate::policy::{CspConfigError, CspDirectives, TrackingPolicy};
use crate::url_codec::{CodecError, Origin, OriginSet};

pub const DEFAULT_SHIM_PATH: &str = "/__gateway/shim.js";
pub const DEFAULT_MAX_REWRITE_SIZE: usize = 8 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Origins(#[from] CodecError),
    #[error(transparent)]
    Csp(#[from] CspConfigError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TlsConfig {
    pub cert: PathBuf,
    pub key: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiddleConfig {
    pub listen: SocketAddr,
    pub connect_timeout_secs: u64,
    pub request_timeout_secs: u64,
    /// Use the literal `sandbox allow-scripts` on trampoline pages.
    pub strict_sandbox: bool,
    pub tls: Option<TlsConfig>,
}

impl Default for MiddleConfig {
    fn default() -> Self {
        MiddleConfig {
            listen: SocketAddr::from(([127, 0, 0, 1], 8090)),
            connect_timeout_secs: 10,
            request_timeout_secs: 30,
            strict_sandbox: false,
            tls: None,
        }
    }
}

impl MiddleConfig {
    pub fn connect_timeout(&self) -> Duration {
        Duration::from_secs(self.connect_timeout_secs)
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_secs(self.request_timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    /// Where the rewrite server listens.
    pub listen: SocketAddr,
    /// The original web server.
    pub upstream: Url,
    pub first_party_origin: Origin,
    pub middle_origin: Origin,
    #[serde(default)]
    pub first_party_allowlist: Vec<Origin>,
    #[serde(default)]
    pub policy: TrackingPolicy,
    #[serde(default)]
    pub csp: CspDirectives,
    #[serde(default = "default_rules")]
    pub rules: Vec<TagRule>,
    #[serde(default = "default_shim_path")]
    pub shim_path: String,
    /// Replaces the built-in shim template.
    #[serde(default)]
    pub shim_template: Option<PathBuf>,
    #[serde(default = "default_max_rewrite_size")]
    pub max_rewrite_size: usize,
    #[serde(default)]
    pub tls: Option<TlsConfig>,
    #[serde(default)]
    pub middle: MiddleConfig,
}

fn default_shim_path() -> String {
    DEFAULT_SHIM_PATH.to_owned()
}

fn default_max_rewrite_size() -> usize {
    DEFAULT_MAX_REWRITE_SIZE
}

impl GatewayConfig {
    /// A config with every optional field at its default.
    pub fn new(listen: SocketAddr, upstream: Url, first_party_origin: Origin, middle_origin: Origin) -> Self {
        GatewayConfig {
            listen,
            upstream,
            first_party_origin,
            middle_origin,
            first_party_allowlist: Vec::new(),
            policy: TrackingPolicy::default(),
            csp: CspDirectives::default(),
            rules: default_rules(),
            shim_path: default_shim_path(),
            shim_template: None,
            max_rewrite_size: DEFAULT_MAX_REWRITE_SIZE,
            tls: None,
            middle: MiddleConfig::default(),
        }
    }

    pub fn from_json(json: &str) -> Result<Self, ConfigError> {
        let config: GatewayConfig = serde_json::from_str(json)?;
        config.validated()
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let json =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_owned(), source })?;
        Self::from_json(&json)
    }

    /// Checks invariants and tops the strip lists up to their minimum.
    pub fn validated(mut self) -> Result<Self, ConfigError> {
        self.origins()?;
        self.csp.validate()?;
        self.policy = self.policy.normalized();
        if !matches!(self.upstream.scheme(), "http" | "https") || self.upstream.host_str().is_none() {
            return Err(ConfigError::Invalid("upstream must be an http(s) URL".into()));
        }
        let upstream_addr = self.upstream.socket_addrs(|| None).ok();
        if upstream_addr.is_some_and(|addrs| addrs.contains(&self.listen)) {
            return Err(ConfigError::Invalid("listen and upstream addresses must differ".into()));
        }
        if !self.shim_path.starts_with('/') || self.shim_path.starts_with("//") {
            return Err(ConfigError::Invalid("shim_path must be an absolute path on the first-party origin".into()));
        }
        if self.max_rewrite_size == 0 {
            return Err(ConfigError::Invalid("max_rewrite_size must be positive".into()));
        }
        Ok(self)
    }

    pub fn origins(&self) -> Result<OriginSet, CodecError> {
        OriginSet::with_allowlist(
            self.first_party_origin.clone(),
            self.middle_origin.clone(),
            self.first_party_allowlist.clone(),
        )
    }
}
