//! HTML rewriting: third-party references in markup are replaced by their
//! middle-party encapsulation and the client shim is injected at the top of
//! `<head>`.
//!
//! Rewriting runs in two streaming passes over the decoded document. The
//! first pass only looks (is there a `<head>`? a `<base href>`? is the shim
//! already present?); the second pass edits. Untouched markup is copied
//! byte-for-byte, which keeps the transformation idempotent.

use std::cell::RefCell;
use std::collections::HashMap;

use encoding_rs::{Encoding, UTF_8};
use lol_html::html_content::{ContentType, Element};
use lol_html::{element, rewrite_str, text, RewriteStrSettings};
use serde::{Deserialize, Serialize};
use url::Url;

use crate::css;
use crate::report::RewriteReport;
use crate::url_codec::{encode, resolve, ContextKind, OriginSet, ProxiedUrl, UrlClass};

#[derive(Debug, thiserror::Error)]
#[error("HTML rewriting failed: {0}")]
pub struct HtmlError(String);

impl From<lol_html::errors::RewritingError> for HtmlError {
    fn from(e: lol_html::errors::RewritingError) -> Self {
        HtmlError(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagRule {
    pub element: String,
    pub attribute: String,
    pub kind: ContextKind,
    #[serde(default = "enabled_by_default")]
    pub enabled: bool,
}

fn enabled_by_default() -> bool {
    true
}

impl TagRule {
    pub fn new(element: &str, attribute: &str, kind: ContextKind) -> Self {
        TagRule { element: element.to_owned(), attribute: attribute.to_owned(), kind, enabled: true }
    }
}

/// Third-party content positions and the context each one loads in.
pub fn default_rules() -> Vec<TagRule> {
    use ContextKind::*;
    [
        ("link", "href", InContext),
        ("img", "src", InContext),
        ("audio", "src", InContext),
        ("video", "src", InContext),
        ("source", "src", InContext),
        ("form", "action", InContext),
        ("script", "src", InContext),
        ("iframe", "src", CrossContext),
        ("frame", "src", CrossContext),
        ("a", "href", CrossContext),
        ("object", "data", CrossContext),
        ("embed", "src", CrossContext),
        ("applet", "code", CrossContext),
        ("applet", "archive", CrossContext),
        // Same requests as the rows above, missing from the classic table.
        ("img", "srcset", InContext),
        ("source", "srcset", InContext),
        ("track", "src", InContext),
        ("input", "src", InContext),
        ("video", "poster", InContext),
        ("button", "formaction", InContext),
        ("input", "formaction", InContext),
        ("area", "href", CrossContext),
    ]
    .into_iter()
    .map(|(e, a, k)| TagRule::new(e, a, k))
    .collect()
}

/// How an attribute value holds URLs.
#[derive(Clone, Copy, PartialEq, Eq)]
enum ValueShape {
    Single,
    /// `url [descriptors], url [descriptors]`
    Srcset,
    /// Comma or space separated URL list (`applet[archive]`).
    List,
}

fn shape_of(attribute: &str) -> ValueShape {
    match attribute {
        "srcset" => ValueShape::Srcset,
        "archive" => ValueShape::List,
        _ => ValueShape::Single,
    }
}

pub fn shim_tag(shim_url: &str) -> String {
    format!("<script src=\"{}\"></script>", escape_attribute(shim_url))
}

fn escape_attribute(value: &str) -> String {
    value.replace('&', "&amp;").replace('"', "&quot;")
}

fn attribute_value(el: &Element, name: &str) -> Option<String> {
    el.get_attribute(name).map(|raw| html_escape::decode_html_entities(&raw).into_owned())
}

fn set_attribute(el: &mut Element, name: &str, value: &str) {
    // Names come from the rule table or existing attributes; both are valid.
    let _ = el.set_attribute(name, &escape_attribute(value));
}

#[derive(Debug, Default)]
struct Scan {
    has_head: bool,
    has_html: bool,
    has_shim: bool,
    base_href: Option<String>,
}

fn scan(document: &str, shim_url: &str) -> Result<Scan, HtmlError> {
    let found = RefCell::new(Scan::default());
    rewrite_str(
        document,
        RewriteStrSettings::new()
            .append_element_content_handler(element!("head", |_| {
                found.borrow_mut().has_head = true;
                Ok(())
            }))
            .append_element_content_handler(element!("html", |_| {
                found.borrow_mut().has_html = true;
                Ok(())
            }))
            .append_element_content_handler(element!("script[src]", |el| {
                if attribute_value(el, "src").as_deref() == Some(shim_url) {
                    found.borrow_mut().has_shim = true;
                }
                Ok(())
            }))
            .append_element_content_handler(element!("base[href]", |el| {
                let mut found = found.borrow_mut();
                if found.base_href.is_none() {
                    found.base_href = attribute_value(el, "href");
                }
                Ok(())
            })),
    )?;
    Ok(found.into_inner())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum ShimPlacement {
    Present,
    IntoHead,
    NewHeadInHtml,
    NewHeadBeforeFirstElement,
}

impl ShimPlacement {
    fn from_scan(scan: &Scan) -> Self {
        if scan.has_shim {
            ShimPlacement::Present
        } else if scan.has_head {
            ShimPlacement::IntoHead
        } else if scan.has_html {
            ShimPlacement::NewHeadInHtml
        } else {
            ShimPlacement::NewHeadBeforeFirstElement
        }
    }
}

struct ShimInjector<'a> {
    placement: ShimPlacement,
    shim_url: &'a str,
    done: bool,
}

impl<'a> ShimInjector<'a> {
    fn new(scan: &Scan, shim_url: &'a str) -> Self {
        let placement = ShimPlacement::from_scan(scan);
        ShimInjector { placement, shim_url, done: placement == ShimPlacement::Present }
    }

    fn on_element(&mut self, el: &mut Element, tag: &str) {
        if self.done {
            return;
        }
        let tag_html = shim_tag(self.shim_url);
        match self.placement {
            ShimPlacement::IntoHead if tag == "head" => el.prepend(&tag_html, ContentType::Html),
            ShimPlacement::NewHeadInHtml if tag == "html" => {
                el.prepend(&format!("<head>{tag_html}</head>"), ContentType::Html)
            }
            ShimPlacement::NewHeadBeforeFirstElement => {
                el.before(&format!("<head>{tag_html}</head>"), ContentType::Html)
            }
            _ => return,
        }
        self.done = true;
    }

    /// For documents without a single element.
    fn finish(&self, output: String) -> String {
        if self.done {
            return output;
        }
        let head = format!("<head>{}</head>", shim_tag(self.shim_url));
        let doctype_end =
            output.get(..9).filter(|p| p.eq_ignore_ascii_case("<!doctype")).and_then(|_| output.find('>'));
        match doctype_end {
            Some(end) => format!("{}{head}{}", &output[..=end], &output[end + 1..]),
            None => format!("{head}{output}"),
        }
    }
}

/// Inserts `<script src=shim_url>` as the first child of `<head>`, creating
/// the head when the document has none. Documents that already reference
/// the shim are returned unchanged.
pub fn inject_shim(document: &str, shim_url: &str) -> Result<String, HtmlError> {
    let scan = scan(document, shim_url)?;
    let injector = RefCell::new(ShimInjector::new(&scan, shim_url));
    let output = rewrite_str(
        document,
        RewriteStrSettings::new().append_element_content_handler(element!("*", |el| {
            let tag = el.tag_name();
            injector.borrow_mut().on_element(el, &tag);
            Ok(())
        })),
    )?;
    Ok(injector.into_inner().finish(output))
}

/// Picks the document encoding: `charset` parameter of the Content-Type
/// header, then a `<meta>` declaration in the first 1024 bytes, then UTF-8.
/// A byte order mark still wins when decoding.
pub fn detect_charset(document: &[u8], content_type: Option<&str>) -> &'static Encoding {
    let from_header = content_type.and_then(charset_param).and_then(|l| Encoding::for_label(l.as_bytes()));
    let encoding = from_header.or_else(|| meta_charset(document)).unwrap_or(UTF_8);
    // UTF-16 can only be detected from a BOM; a declaration is wrong by definition.
    if encoding == encoding_rs::UTF_16LE || encoding == encoding_rs::UTF_16BE {
        return UTF_8;
    }
    encoding
}

/// The `charset` parameter of a Content-Type value.
pub fn charset_param(content_type: &str) -> Option<String> {
    content_type.split(';').skip(1).find_map(|param| {
        let (name, value) = param.split_once('=')?;
        name.trim().eq_ignore_ascii_case("charset").then(|| value.trim().trim_matches(['"', '\'']).to_owned())
    })
}

fn meta_charset(document: &[u8]) -> Option<&'static Encoding> {
    let head = &document[..document.len().min(1024)];
    let lower: Vec<u8> = head.to_ascii_lowercase();
    let mut from = 0;
    while let Some(pos) = find(&lower[from..], b"<meta") {
        let start = from + pos + 5;
        let end = find(&lower[start..], b">").map_or(lower.len(), |p| start + p);
        let tag = &lower[start..end];
        if let Some(cs) = find(tag, b"charset") {
            let rest = &tag[cs + 7..];
            let rest = trim_ascii_start(rest);
            if let Some(rest) = rest.strip_prefix(b"=") {
                let rest = trim_ascii_start(rest);
                let rest = rest.strip_prefix(b"\"").or_else(|| rest.strip_prefix(b"'")).unwrap_or(rest);
                let label_end = rest
                    .iter()
                    .position(|b| matches!(b, b'"' | b'\'' | b';' | b'/' | b'>') || b.is_ascii_whitespace())
                    .unwrap_or(rest.len());
                if let Some(enc) = Encoding::for_label(&rest[..label_end]) {
                    return Some(enc);
                }
            }
        }
        from = end;
    }
    None
}

fn find(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn trim_ascii_start(mut s: &[u8]) -> &[u8] {
    while let [first, rest @ ..] = s {
        if first.is_ascii_whitespace() {
            s = rest;
        } else {
            break;
        }
    }
    s
}

/// Rewrites third-party references in HTML documents.
#[derive(Debug, Clone)]
pub struct HtmlRewriter {
    origins: OriginSet,
    shim_url: String,
    rules: HashMap<String, Vec<(String, ContextKind)>>,
}

impl HtmlRewriter {
    /// Disabled rules are ignored.
    pub fn new(origins: OriginSet, rules: &[TagRule], shim_url: impl Into<String>) -> Self {
        let mut by_element: HashMap<String, Vec<(String, ContextKind)>> = HashMap::new();
        for rule in rules.iter().filter(|r| r.enabled) {
            by_element
                .entry(rule.element.to_ascii_lowercase())
                .or_default()
                .push((rule.attribute.to_ascii_lowercase(), rule.kind));
        }
        HtmlRewriter { origins, shim_url: shim_url.into(), rules: by_element }
    }

    pub fn origins(&self) -> &OriginSet {
        &self.origins
    }

    pub fn shim_url(&self) -> &str {
        &self.shim_url
    }

    /// Decodes `document` (see [`detect_charset`]), rewrites it against
    /// `base` and returns UTF-8 output.
    pub fn rewrite_html(
        &self,
        document: &[u8],
        content_type: Option<&str>,
        base: &Url,
    ) -> Result<(Vec<u8>, RewriteReport), HtmlError> {
        let encoding = detect_charset(document, content_type);
        let (text, _, _) = encoding.decode(document);
        let (out, report) = self.rewrite_str(&text, base)?;
        Ok((out.into_bytes(), report))
    }

    /// Rewrites an already decoded document.
    pub fn rewrite_str(&self, document: &str, base: &Url) -> Result<(String, RewriteReport), HtmlError> {
        let scan = scan(document, &self.shim_url)?;
        let (effective_base, drop_base) = self.effective_base(&scan, base);

        let report = RefCell::new(RewriteReport::default());
        let injector = RefCell::new(ShimInjector::new(&scan, &self.shim_url));
        let base_seen = RefCell::new(false);
        let style_text = RefCell::new(String::new());

        let output = rewrite_str(
            document,
            RewriteStrSettings::new()
                .append_element_content_handler(element!("*", |el| {
                    let tag = el.tag_name();
                    injector.borrow_mut().on_element(el, &tag);
                    if tag == "base" && el.has_attribute("href") && !base_seen.replace(true) && drop_base {
                        el.remove();
                        return Ok(());
                    }
                    if tag == "meta" {
                        update_meta_charset(el);
                    }
                    let mut report = report.borrow_mut();
                    self.rewrite_element(el, &tag, &effective_base, &mut report);
                    Ok(())
                }))
                .append_element_content_handler(text!("style", |chunk| {
                    let mut buffered = style_text.borrow_mut();
                    buffered.push_str(chunk.as_str());
                    if chunk.last_in_text_node() {
                        let rewritten =
                            css::rewrite_css_with(&buffered, &effective_base, &self.origins, &mut report.borrow_mut());
                        chunk.replace(&rewritten, ContentType::Html);
                        buffered.clear();
                    } else {
                        chunk.remove();
                    }
                    Ok(())
                })),
        )?;
        let output = injector.into_inner().finish(output);
        Ok((output, report.into_inner()))
    }

    /// Returns the base used for resolution and whether the `<base>`
    /// element must be removed (it points off the first-party origin).
    fn effective_base(&self, scan: &Scan, document_url: &Url) -> (Url, bool) {
        let Some(href) = scan.base_href.as_deref() else {
            return (document_url.clone(), false);
        };
        match resolve(href, document_url, &self.origins) {
            Ok((resolved, UrlClass::FirstParty)) => (resolved, false),
            Ok((resolved, UrlClass::ThirdParty | UrlClass::MiddleParty)) => (resolved, true),
            // Browsers ignore non-http(s) bases.
            Ok((_, UrlClass::NonHttp)) | Err(_) => (document_url.clone(), true),
        }
    }

    fn rewrite_element(&self, el: &mut Element, tag: &str, base: &Url, report: &mut RewriteReport) {
        if let Some(rules) = self.rules.get(tag) {
            for (attribute, kind) in rules {
                if tag == "input" && attribute == "src" && !is_image_input(el) {
                    continue;
                }
                let Some(value) = attribute_value(el, attribute) else {
                    continue;
                };
                let mut rewrote = 0;
                let new_value = match shape_of(attribute) {
                    ValueShape::Single => self.rewrite_url(&value, *kind, base, report).inspect(|_| rewrote += 1),
                    ValueShape::Srcset => rewrite_spans(&value, srcset_url_spans(&value), |url| {
                        self.rewrite_url(url, *kind, base, report).inspect(|_| rewrote += 1)
                    }),
                    ValueShape::List => rewrite_spans(&value, list_url_spans(&value), |url| {
                        self.rewrite_url(url, *kind, base, report).inspect(|_| rewrote += 1)
                    }),
                };
                if let Some(new_value) = new_value {
                    set_attribute(el, attribute, &new_value);
                    for _ in 0..rewrote {
                        report.record(tag, attribute);
                    }
                }
            }
        }
        if let Some(style) = attribute_value(el, "style") {
            let before = report.total();
            let rewritten = css::rewrite_css_with(&style, base, &self.origins, report);
            if report.total() != before {
                set_attribute(el, "style", &rewritten);
            }
        }
    }

    /// `Some(encapsulated)` when `value` is a third-party URL.
    fn rewrite_url(&self, value: &str, kind: ContextKind, base: &Url, report: &mut RewriteReport) -> Option<String> {
        let trimmed = value.trim();
        if trimmed.is_empty() {
            return None;
        }
        match resolve(trimmed, base, &self.origins) {
            Ok((resolved, UrlClass::ThirdParty)) => match ProxiedUrl::new(resolved, kind) {
                Ok(p) => Some(encode(&p, &self.origins).into()),
                Err(_) => {
                    report.unparsable += 1;
                    None
                }
            },
            Ok((_, UrlClass::NonHttp)) => {
                report.skipped_nonhttp += 1;
                None
            }
            Ok(_) => None,
            Err(_) => {
                report.unparsable += 1;
                None
            }
        }
    }
}

fn is_image_input(el: &Element) -> bool {
    attribute_value(el, "type").is_some_and(|t| t.trim().eq_ignore_ascii_case("image"))
}

fn update_meta_charset(el: &mut Element) {
    if let Some(charset) = attribute_value(el, "charset") {
        if !charset.trim().eq_ignore_ascii_case("utf-8") {
            set_attribute(el, "charset", "utf-8");
        }
        return;
    }
    let is_content_type =
        attribute_value(el, "http-equiv").is_some_and(|v| v.trim().eq_ignore_ascii_case("content-type"));
    if !is_content_type {
        return;
    }
    if let Some(content) = attribute_value(el, "content") {
        let declared = charset_param(&content);
        if declared.is_some_and(|c| !c.eq_ignore_ascii_case("utf-8")) {
            set_attribute(el, "content", "text/html; charset=utf-8");
        }
    }
}

/// Byte ranges of candidate URLs in a `srcset` value.
fn srcset_url_spans(value: &str) -> Vec<(usize, usize)> {
    let bytes = value.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b',') {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        let mut end = i;
        while end > start && bytes[end - 1] == b',' {
            end -= 1;
        }
        if end > start {
            spans.push((start, end));
        }
        if end < i {
            // URL ended with a comma: no descriptors follow.
            continue;
        }
        let mut depth = 0u32;
        while i < bytes.len() {
            match bytes[i] {
                b'(' => depth += 1,
                b')' => depth = depth.saturating_sub(1),
                b',' if depth == 0 => break,
                _ => {}
            }
            i += 1;
        }
    }
    spans
}

fn list_url_spans(value: &str) -> Vec<(usize, usize)> {
    let bytes = value.as_bytes();
    let mut spans = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b',') {
            i += 1;
        }
        let start = i;
        while i < bytes.len() && !(bytes[i].is_ascii_whitespace() || bytes[i] == b',') {
            i += 1;
        }
        if i > start {
            spans.push((start, i));
        }
    }
    spans
}

/// Applies `rewrite` to every span; `None` when nothing changed.
fn rewrite_spans(
    value: &str,
    spans: Vec<(usize, usize)>,
    mut rewrite: impl FnMut(&str) -> Option<String>,
) -> Option<String> {
    let mut out = String::with_capacity(value.len());
    let mut copied = 0;
    for (start, end) in spans {
        if let Some(new) = rewrite(&value[start..end]) {
            out.push_str(&value[copied..start]);
            out.push_str(&new);
            copied = end;
        }
    }
    if copied == 0 {
        return None;
    }
    out.push_str(&value[copied..]);
    Some(out)
}
