//! Stylesheet rewriting.
//!
//! This is a scanner, not a parser: it recognizes comments, strings,
//! `url(...)` tokens and `@import "..."` preludes, and copies every other
//! byte through unchanged. Only the URL inside a token is ever replaced, so
//! quoting and surrounding whitespace survive.

use encoding_rs::{Encoding, UTF_8};
use url::Url;

use crate::html::charset_param;
use crate::report::RewriteReport;
use crate::url_codec::{encode, resolve, ContextKind, OriginSet, ProxiedUrl, UrlClass};

pub const CSS_ELEMENT: &str = "css";
pub const URL_TOKEN: &str = "url";
pub const IMPORT_TOKEN: &str = "@import";

/// Rewrites every third-party `url()` and `@import` target in a stylesheet
/// to its in-context middle-party encapsulation.
pub fn rewrite_css(text: &str, base: &Url, origins: &OriginSet) -> (String, RewriteReport) {
    let mut report = RewriteReport::default();
    let out = rewrite_css_with(text, base, origins, &mut report);
    (out, report)
}

/// Same as [`rewrite_css`] for the content of a `style` attribute.
pub fn rewrite_style_attribute(value: &str, base: &Url, origins: &OriginSet) -> String {
    rewrite_css_with(value, base, origins, &mut RewriteReport::default())
}

/// Decodes a stylesheet: BOM, then the Content-Type `charset` parameter,
/// then a leading `@charset` rule, then UTF-8. `None` when the bytes are not
/// valid in the chosen encoding, so the caller can pass them through
/// untouched instead of altering them.
pub fn decode_stylesheet(bytes: &[u8], content_type: Option<&str>) -> Option<String> {
    let (encoding, body) = match Encoding::for_bom(bytes) {
        Some((enc, bom_len)) => (enc, &bytes[bom_len..]),
        None => {
            let declared = content_type
                .and_then(charset_param)
                .and_then(|l| Encoding::for_label(l.as_bytes()))
                .or_else(|| at_charset(bytes))
                .unwrap_or(UTF_8);
            (declared, bytes)
        }
    };
    encoding.decode_without_bom_handling_and_without_replacement(body).map(|text| text.into_owned())
}

fn at_charset(bytes: &[u8]) -> Option<&'static Encoding> {
    let rest = bytes.strip_prefix(b"@charset \"")?;
    let end = rest.iter().position(|&b| b == b'"')?;
    let encoding = Encoding::for_label(&rest[..end])?;
    // A stylesheet declaring UTF-16 in ASCII bytes is really UTF-8.
    if encoding == encoding_rs::UTF_16LE || encoding == encoding_rs::UTF_16BE {
        return Some(UTF_8);
    }
    Some(encoding)
}

pub(crate) fn rewrite_css_with(text: &str, base: &Url, origins: &OriginSet, report: &mut RewriteReport) -> String {
    let mut scanner = Scanner { text, bytes: text.as_bytes(), out: String::new(), copied: 0, base, origins, report };
    scanner.run();
    if scanner.copied == 0 {
        return text.to_owned();
    }
    let Scanner { mut out, copied, .. } = scanner;
    out.push_str(&text[copied..]);
    out
}

struct Scanner<'a> {
    text: &'a str,
    bytes: &'a [u8],
    out: String,
    copied: usize,
    base: &'a Url,
    origins: &'a OriginSet,
    report: &'a mut RewriteReport,
}

fn is_name_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || b >= 0x80
}

fn is_css_whitespace(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | b'\x0c')
}

impl Scanner<'_> {
    fn run(&mut self) {
        let len = self.bytes.len();
        let mut i = 0;
        let mut import_pending = false;
        while i < len {
            match self.bytes[i] {
                b'/' if self.bytes.get(i + 1) == Some(&b'*') => {
                    i = self.text[i + 2..].find("*/").map_or(len, |p| i + 2 + p + 2);
                }
                b'"' | b'\'' => {
                    let (content_end, token_end) = self.scan_string(i);
                    if import_pending && token_end > content_end {
                        self.rewrite_range(i + 1, content_end, IMPORT_TOKEN);
                    }
                    import_pending = false;
                    i = token_end;
                }
                b'\\' => {
                    import_pending = false;
                    i = self.skip_escape(i);
                }
                b'@' => {
                    let start = i + 1;
                    let mut end = start;
                    while end < len && is_name_byte(self.bytes[end]) {
                        end += 1;
                    }
                    import_pending = self.text[start..end].eq_ignore_ascii_case("import");
                    i = end.max(start);
                }
                b if is_css_whitespace(b) => i += 1,
                b if is_name_byte(b) => {
                    let start = i;
                    while i < len && is_name_byte(self.bytes[i]) {
                        i += 1;
                    }
                    if self.bytes.get(i) == Some(&b'(') && self.text[start..i].eq_ignore_ascii_case("url") {
                        i = self.url_token(i + 1);
                    }
                    import_pending = false;
                }
                _ => {
                    import_pending = false;
                    i += 1;
                }
            }
        }
    }

    /// Returns `(content_end, token_end)`. An unterminated string ends at the
    /// newline or EOF and has `content_end == token_end`.
    fn scan_string(&self, open: usize) -> (usize, usize) {
        let quote = self.bytes[open];
        let mut k = open + 1;
        while k < self.bytes.len() {
            match self.bytes[k] {
                c if c == quote => return (k, k + 1),
                b'\\' => k += 2,
                b'\n' | b'\r' | b'\x0c' => return (k, k),
                _ => k += 1,
            }
        }
        let len = self.bytes.len();
        (len, len)
    }

    /// `k` points at a backslash. Hex escapes swallow one trailing whitespace.
    fn skip_escape(&self, k: usize) -> usize {
        let mut j = k + 1;
        let hex_start = j;
        while j < self.bytes.len() && j - hex_start < 6 && self.bytes[j].is_ascii_hexdigit() {
            j += 1;
        }
        if j == hex_start {
            let escaped = self.text.get(j..).and_then(|rest| rest.chars().next());
            return j + escaped.map_or(0, char::len_utf8);
        }
        if j < self.bytes.len() && is_css_whitespace(self.bytes[j]) {
            j += 1;
        }
        j
    }

    fn skip_whitespace(&self, mut k: usize) -> usize {
        while k < self.bytes.len() && is_css_whitespace(self.bytes[k]) {
            k += 1;
        }
        k
    }

    /// `after_paren` points just past `url(`; returns the index after the token.
    fn url_token(&mut self, after_paren: usize) -> usize {
        let len = self.bytes.len();
        let j = self.skip_whitespace(after_paren);
        if j >= len {
            self.report.unparsable += 1;
            return len;
        }
        if matches!(self.bytes[j], b'"' | b'\'') {
            let (content_end, token_end) = self.scan_string(j);
            let close = self.skip_whitespace(token_end);
            if token_end > content_end && self.bytes.get(close) == Some(&b')') {
                self.rewrite_range(j + 1, content_end, URL_TOKEN);
                return close + 1;
            }
            self.report.unparsable += 1;
            return self.skip_bad_url(token_end);
        }
        let mut k = j;
        while k < len {
            match self.bytes[k] {
                b')' => {
                    self.rewrite_range(j, k, URL_TOKEN);
                    return k + 1;
                }
                b if is_css_whitespace(b) => {
                    let close = self.skip_whitespace(k);
                    if self.bytes.get(close) == Some(&b')') {
                        self.rewrite_range(j, k, URL_TOKEN);
                        return close + 1;
                    }
                    break;
                }
                b'"' | b'\'' | b'(' => break,
                b if b < 0x20 || b == 0x7f => break,
                b'\\' => k = self.skip_escape(k),
                _ => k += 1,
            }
        }
        self.report.unparsable += 1;
        self.skip_bad_url(k)
    }

    fn skip_bad_url(&self, mut k: usize) -> usize {
        while k < self.bytes.len() {
            match self.bytes[k] {
                b')' => return k + 1,
                b'\\' => k = self.skip_escape(k),
                _ => k += 1,
            }
        }
        self.bytes.len()
    }

    fn rewrite_range(&mut self, start: usize, end: usize, token: &str) {
        let end = end.min(self.bytes.len());
        let raw = &self.text[start..end];
        let value = if raw.contains('\\') { unescape(raw) } else { raw.trim().to_owned() };
        if value.is_empty() {
            return;
        }
        let (resolved, class) = match resolve(&value, self.base, self.origins) {
            Ok(r) => r,
            Err(_) => {
                self.report.unparsable += 1;
                return;
            }
        };
        match class {
            UrlClass::ThirdParty => {}
            UrlClass::NonHttp => {
                self.report.skipped_nonhttp += 1;
                return;
            }
            UrlClass::FirstParty | UrlClass::MiddleParty => return,
        }
        let Ok(proxied) = ProxiedUrl::new(resolved, ContextKind::InContext) else {
            self.report.unparsable += 1;
            return;
        };
        self.out.push_str(&self.text[self.copied..start]);
        self.out.push_str(encode(&proxied, self.origins).as_str());
        self.copied = end;
        self.report.record(CSS_ELEMENT, token);
    }
}

/// Resolves CSS escapes (`\26 `, `\"`, escaped newlines).
fn unescape(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut chars = raw.chars().peekable();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        let mut hex = String::new();
        while hex.len() < 6 {
            match chars.peek() {
                Some(h) if h.is_ascii_hexdigit() => {
                    hex.push(*h);
                    chars.next();
                }
                _ => break,
            }
        }
        if !hex.is_empty() {
            let cp = u32::from_str_radix(&hex, 16).unwrap_or(0xfffd);
            out.push(char::from_u32(cp).filter(|&c| c != '\0').unwrap_or('\u{fffd}'));
            if matches!(chars.peek(), Some(' ' | '\t' | '\n')) {
                chars.next();
            }
            continue;
        }
        match chars.next() {
            Some('\n') | None => {}
            Some(other) => out.push(other),
        }
    }
    out.trim().to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decodes_declared_charsets() {
        assert_eq!(decode_stylesheet(b"a{}", None).unwrap(), "a{}");
        assert_eq!(
            decode_stylesheet(b"p{content:\"\xe9\"}", Some("text/css; charset=latin1")).unwrap(),
            "p{content:\"é\"}"
        );
        assert_eq!(decode_stylesheet(b"@charset \"iso-8859-1\"; \xe9", None).unwrap(), "@charset \"iso-8859-1\"; é");
        assert_eq!(decode_stylesheet(b"\xef\xbb\xbfa", Some("text/css; charset=latin1")).unwrap(), "a");
        assert!(decode_stylesheet(b"a\xffb", Some("text/css")).is_none());
    }

    fn origins() -> OriginSet {
        OriginSet::new("http://mysite.com".parse().unwrap(), "http://middle.com".parse().unwrap()).unwrap()
    }

    fn rewrite(css: &str) -> (String, RewriteReport) {
        rewrite_css(css, &Url::parse("http://mysite.com/css/site.css").unwrap(), &origins())
    }

    #[test]
    fn background_image() {
        let (out, report) = rewrite("background-image: url(http://third.com/bg.png)");
        assert_eq!(out, "background-image: url(http://middle.com/?src=http%3A%2F%2Fthird.com%2Fbg.png)");
        assert_eq!(report.count(CSS_ELEMENT, URL_TOKEN), 1);
    }

    #[test]
    fn font_face() {
        let (out, _) = rewrite("@font-face { src: url(http://third.com/f.woff); }");
        assert_eq!(out, "@font-face { src: url(http://middle.com/?src=http%3A%2F%2Fthird.com%2Ff.woff); }");
    }

    #[test]
    fn no_urls_is_identity() {
        let (out, report) = rewrite("color: red;");
        assert_eq!(out, "color: red;");
        assert_eq!(report, RewriteReport::default());
    }

    #[test]
    fn import_string_keeps_quotes() {
        let (out, report) = rewrite("@import \"http://third.com/a.css\";\n@IMPORT 'http://third.com/b.css' screen;");
        assert_eq!(
            out,
            "@import \"http://middle.com/?src=http%3A%2F%2Fthird.com%2Fa.css\";\n@IMPORT 'http://middle.com/?src=http%3A%2F%2Fthird.com%2Fb.css' screen;"
        );
        assert_eq!(report.count(CSS_ELEMENT, IMPORT_TOKEN), 2);
    }

    #[test]
    fn import_with_comment_and_url_function() {
        let (out, report) = rewrite("@import /* x */ url( 'http://t.com/a.css' ) print;");
        assert_eq!(out, "@import /* x */ url( 'http://middle.com/?src=http%3A%2F%2Ft.com%2Fa.css' ) print;");
        assert_eq!(report.count(CSS_ELEMENT, URL_TOKEN), 1);
    }

    #[test]
    fn quoted_url_keeps_quote_style() {
        let (out, _) = rewrite(r#"a{background:url("http://t.com/x.png")} b{background:url( 'http://t.com/y.png' )}"#);
        assert_eq!(
            out,
            r#"a{background:url("http://middle.com/?src=http%3A%2F%2Ft.com%2Fx.png")} b{background:url( 'http://middle.com/?src=http%3A%2F%2Ft.com%2Fy.png' )}"#
        );
    }

    #[test]
    fn data_urls_and_first_party_untouched() {
        let css = "a{background:url(data:image/png;base64,iVBORw0KGgo=)} b{background:url(/img/x.png)} c{background:url(../y.png)}";
        let (out, report) = rewrite(css);
        assert_eq!(out, css);
        assert_eq!(report.skipped_nonhttp, 1);
        assert_eq!(report.total(), 0);
    }

    #[test]
    fn strings_and_comments_are_not_urls() {
        let css = "/* url(http://t.com/a.png) */ a::after{content:\"url(http://t.com/b.png)\"}";
        let (out, _) = rewrite(css);
        assert_eq!(out, css);
    }

    #[test]
    fn url_must_be_a_function_name() {
        let css = "a{x:myurl(http://t.com/a.png)}";
        assert_eq!(rewrite(css).0, css);
    }

    #[test]
    fn escaped_url_is_decoded_before_classification() {
        let (out, _) = rewrite(r"a{background:url(http\3a //t.com/x.png)}");
        assert_eq!(out, "a{background:url(http://middle.com/?src=http%3A%2F%2Ft.com%2Fx.png)}");
    }

    #[test]
    fn bad_url_is_passed_through_and_counted() {
        let css = "a{background:url(http://t.com/a b.png)} b{color:red}";
        let (out, report) = rewrite(css);
        assert_eq!(out, css);
        assert_eq!(report.unparsable, 1);

        let (out, report) = rewrite("a{background:url(http://t.com/x");
        assert_eq!(out, "a{background:url(http://t.com/x");
        assert_eq!(report.unparsable, 1);
    }

    #[test]
    fn escaped_non_ascii_does_not_split_chars() {
        let css = "a\\ü{b:c} d{background:url(x\\é.png)}";
        assert_eq!(rewrite(css).0, css);
    }

    #[test]
    fn style_attribute_protocol_relative() {
        let out = rewrite_style_attribute(
            "background:url('//t.com/x.png')",
            &Url::parse("https://mysite.com/").unwrap(),
            &origins(),
        );
        assert_eq!(out, "background:url('http://middle.com/?src=https%3A%2F%2Ft.com%2Fx.png')");
    }

    #[test]
    fn style_attribute_trivial() {
        let base = Url::parse("http://mysite.com/").unwrap();
        assert_eq!(rewrite_style_attribute("", &base, &origins()), "");
        assert_eq!(rewrite_style_attribute("width:10px", &base, &origins()), "width:10px");
    }

    #[test]
    fn relative_urls_resolve_against_stylesheet() {
        let base = Url::parse("http://third.com/css/a.css").unwrap();
        let (out, _) = rewrite_css("a{background:url(../img/x.png)}", &base, &origins());
        assert_eq!(out, "a{background:url(http://middle.com/?src=http%3A%2F%2Fthird.com%2Fimg%2Fx.png)}");
    }

    #[test]
    fn non_ascii_is_preserved() {
        let css = "a::before{content:\"→ ünïcödé\"} b{background:url(http://t.com/ü.png)} /* ✓ */";
        let (out, report) = rewrite(css);
        assert_eq!(report.total(), 1);
        assert!(out.starts_with("a::before{content:\"→ ünïcödé\"} b{background:url(http://middle.com/?src="));
        assert!(out.ends_with(")} /* ✓ */"), "{out}");
    }
}
