//! Fixture corpus and independent scanners shared by the corpus tests and
//! the acceptance suite. The scanners use `scraper` and regexes, never the
//! rewriters they check.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use gateway_core::{classify, decode, default_rules, ContextKind, HtmlRewriter, OriginSet, RewriteReport, UrlClass};
use regex::Regex;
use scraper::{Html, Selector};
use url::Url;

pub const FIRST_PARTY: &str = "http://mysite.com";
pub const MIDDLE_PARTY: &str = "http://middle.com";
pub const SHIM_PATH: &str = "/__gateway/shim.js";
pub const DOCUMENT_URL: &str = "http://mysite.com/news/page.html";
pub const STYLESHEET_URL: &str = "http://mysite.com/css/site.css";

pub fn origins() -> OriginSet {
    OriginSet::new(FIRST_PARTY.parse().unwrap(), MIDDLE_PARTY.parse().unwrap()).unwrap()
}

pub fn rewriter() -> HtmlRewriter {
    HtmlRewriter::new(origins(), &default_rules(), SHIM_PATH)
}

pub fn tests_dir() -> PathBuf {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests")).to_path_buf()
}

/// `(file name, bytes)` sorted by name.
pub fn fixtures(kind: &str) -> Vec<(String, Vec<u8>)> {
    let dir = tests_dir().join("fixtures").join(kind);
    let mut files: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    files.into_iter().map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())).collect()
}

pub fn rewrite_document(bytes: &[u8]) -> (String, RewriteReport) {
    let (out, report) = rewriter().rewrite_html(bytes, None, &Url::parse(DOCUMENT_URL).unwrap()).unwrap();
    (String::from_utf8(out).expect("rewriter emits UTF-8"), report)
}

/// Compares against `golden/<kind>/<name>`, or rewrites the golden file when
/// `UPDATE_GOLDEN` is set.
pub fn check_golden(kind: &str, name: &str, actual: &str) -> Result<(), String> {
    let path = tests_dir().join("golden").join(kind).join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, actual).unwrap();
        return Ok(());
    }
    let expected = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        Err(format!("{} differs from rewriter output", path.display()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reference {
    pub element: String,
    pub attribute: String,
    pub kind: Option<ContextKind>,
    pub url: String,
}

fn split_srcset(value: &str) -> Vec<String> {
    value
        .split(", ")
        .flat_map(|c| c.split(','))
        .filter_map(|c| c.split_whitespace().next())
        .map(str::to_owned)
        .collect()
}

/// Every URL in an enabled rewrite position, including stylesheet URLs in
/// `<style>` elements and `style` attributes.
pub fn references(html: &str) -> (Url, Vec<Reference>) {
    let doc = Html::parse_document(html);
    let document_url = Url::parse(DOCUMENT_URL).unwrap();
    let base = doc
        .select(&Selector::parse("base[href]").unwrap())
        .next()
        .and_then(|b| document_url.join(b.value().attr("href").unwrap()).ok())
        .unwrap_or(document_url);

    let mut refs = Vec::new();
    for rule in default_rules().into_iter().filter(|r| r.enabled) {
        let selector = Selector::parse(&format!("{}[{}]", rule.element, rule.attribute)).unwrap();
        for el in doc.select(&selector) {
            if rule.element == "input"
                && rule.attribute == "src"
                && !el.value().attr("type").is_some_and(|t| t.eq_ignore_ascii_case("image"))
            {
                continue;
            }
            let value = el.value().attr(&rule.attribute).unwrap();
            let urls = match rule.attribute.as_str() {
                "srcset" => split_srcset(value),
                "archive" => value.split([',', ' ']).filter(|s| !s.is_empty()).map(str::to_owned).collect(),
                _ => vec![value.trim().to_owned()],
            };
            for url in urls.into_iter().filter(|u| !u.is_empty()) {
                refs.push(Reference {
                    element: rule.element.clone(),
                    attribute: rule.attribute.clone(),
                    kind: Some(rule.kind),
                    url,
                });
            }
        }
    }
    for el in doc.select(&Selector::parse("[style]").unwrap()) {
        for url in css_urls(el.value().attr("style").unwrap()) {
            refs.push(Reference { element: "css".into(), attribute: "style".into(), kind: None, url });
        }
    }
    for el in doc.select(&Selector::parse("style").unwrap()) {
        let text: String = el.text().collect();
        for url in css_urls(&text) {
            refs.push(Reference { element: "css".into(), attribute: "style-element".into(), kind: None, url });
        }
    }
    (base, refs)
}

pub fn third_party_residue(html: &str) -> Vec<Reference> {
    let origins = origins();
    let (base, refs) = references(html);
    refs.into_iter().filter(|r| classify(&r.url, &base, &origins) == Ok(UrlClass::ThirdParty)).collect()
}

/// Rewritten references whose encapsulated kind does not match the rule.
pub fn kind_mismatches(html: &str) -> Vec<Reference> {
    let origins = origins();
    let (base, refs) = references(html);
    refs.into_iter()
        .filter(|r| {
            let Ok(resolved) = base.join(&r.url) else { return false };
            if classify(resolved.as_str(), &base, &origins) != Ok(UrlClass::MiddleParty) {
                return false;
            }
            let expected = r.kind.unwrap_or(ContextKind::InContext);
            decode(&resolved, &origins).map(|p| p.kind()) != Ok(expected)
        })
        .collect()
}

fn css_token_regex() -> Regex {
    Regex::new(
        r#"(?is)(?P<comment>/\*.*?\*/)|(?P<url>\burl\(\s*(?:"(?P<dq>[^"]*)"|'(?P<sq>[^']*)'|(?P<uq>[^)\s"']*))\s*\))|(?P<import>@import\s+(?:"(?P<idq>[^"]*)"|'(?P<isq>[^']*)'))|(?P<string>"(?:[^"\\\n]|\\.)*"|'(?:[^'\\\n]|\\.)*')"#,
    )
    .unwrap()
}

/// URLs of every `url()` token and `@import` string outside comments and
/// other strings.
pub fn css_urls(css: &str) -> Vec<String> {
    css_token_regex()
        .captures_iter(css)
        .filter_map(|c| {
            ["dq", "sq", "uq", "idq", "isq"].iter().find_map(|g| c.name(g)).map(|m| m.as_str().trim().to_owned())
        })
        .filter(|u| !u.is_empty())
        .collect()
}

pub fn css_third_party_residue(css: &str, base: &Url) -> Vec<String> {
    let origins = origins();
    css_urls(css).into_iter().filter(|u| classify(u, base, &origins) == Ok(UrlClass::ThirdParty)).collect()
}

/// The stylesheet with every URL token cut out.
pub fn without_url_tokens(css: &str) -> String {
    css_token_regex()
        .replace_all(css, |c: &regex::Captures| {
            if c.name("url").is_some() || c.name("import").is_some() {
                String::new()
            } else {
                c[0].to_owned()
            }
        })
        .into_owned()
}
