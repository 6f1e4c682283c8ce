//! The two servers of the anti-tracking gateway.
//!
//! [`RewriteServer`] sits in front of the original site as a reverse proxy
//! and rewrites its pages so every third-party reference points at the
//! middle party. [`MiddleServer`] decapsulates those references, strips
//! stateful tracking headers for in-context content and answers
//! cross-context requests with a trampoline page.

mod forward;
pub mod middle;
pub mod rewrite;
pub mod serve;
pub mod shim;

pub use forward::build_client;
pub use middle::{trampoline_html, MiddleMetrics, MiddleServer, TRAMPOLINE_SCRIPT};
pub use rewrite::{RewriteMetrics, RewriteServer};
pub use serve::{load_tls, serve};

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error(transparent)]
    Config(#[from] gateway_core::ConfigError),
    #[error("TLS setup failed: {0}")]
    Tls(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cannot build HTTP client: {0}")]
    Client(#[from] reqwest::Error),
}

/// Installs the log subscriber used by the binaries. `RUST_LOG` overrides
/// the default `info` level.
pub fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    tracing_subscriber::fmt().with_env_filter(filter).with_target(false).init();
}
