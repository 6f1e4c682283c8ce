//! The client-side script injected into every rewritten page.
//!
//! The template carries placeholders that are replaced with JSON literals
//! once at startup, so the script always agrees with the servers on the
//! origins and parameter names.

use std::path::Path;

use gateway_core::url_codec::{CROSS_CONTEXT_PARAM, IN_CONTEXT_PARAM};
use gateway_core::OriginSet;

pub const DEFAULT_TEMPLATE: &str = include_str!("../assets/shim.js");

pub const MIDDLE_ORIGIN: &str = "__MIDDLE_ORIGIN__";
pub const FIRST_PARTY_ORIGINS: &str = "__FIRST_PARTY_ORIGINS__";
pub const IN_CONTEXT: &str = "__IN_CONTEXT_PARAM__";
pub const CROSS_CONTEXT: &str = "__CROSS_CONTEXT_PARAM__";

fn json(value: impl Into<serde_json::Value>) -> String {
    value.into().to_string()
}

pub fn render(template: &str, origins: &OriginSet) -> String {
    let first_party: Vec<String> = std::iter::once(origins.first_party())
        .chain(origins.first_party_allowlist())
        .map(ToString::to_string)
        .collect();
    template
        .replace(MIDDLE_ORIGIN, &json(origins.middle_party().to_string()))
        .replace(FIRST_PARTY_ORIGINS, &json(first_party))
        .replace(IN_CONTEXT, &json(IN_CONTEXT_PARAM))
        .replace(CROSS_CONTEXT, &json(CROSS_CONTEXT_PARAM))
}

/// Renders `path` if given, else the built-in template.
pub fn load(path: Option<&Path>, origins: &OriginSet) -> std::io::Result<String> {
    let template = match path {
        Some(path) => std::fs::read_to_string(path)?,
        None => DEFAULT_TEMPLATE.to_owned(),
    };
    Ok(render(&template, origins))
}
