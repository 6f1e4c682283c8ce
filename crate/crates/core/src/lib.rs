//! Building blocks of the anti-tracking gateway.
//!
//! - [`url_codec`]: classification of URLs relative to the first party and
//!   the middle party, and the `?src=` / `?emb=` encapsulation.
//! - [`policy`]: header strip lists, `Location` rewriting, CSP builder.
//! - [`html`] and [`css`]: document rewriters.
//! - [`config`]: the JSON configuration shared by both servers.

pub mod config;
pub mod css;
pub mod html;
pub mod policy;
pub mod report;
pub mod url_codec;

pub use config::{ConfigError, GatewayConfig, MiddleConfig, TlsConfig};
pub use css::{decode_stylesheet, rewrite_css, rewrite_style_attribute};
pub use html::{charset_param, default_rules, inject_shim, HtmlRewriter, TagRule};
pub use policy::{build_csp, CspDirectives, CspSource, HeaderList, StripOutcome, TrackingPolicy};
pub use report::RewriteReport;
pub use url_codec::{
    classify, decode, encode, resolve, CodecError, ContextKind, Origin, OriginSet, ProxiedUrl, UrlClass,
};
