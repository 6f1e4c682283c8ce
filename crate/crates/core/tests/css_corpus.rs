#[path = "support/corpus.rs"]
mod corpus;

use corpus::*;
use gateway_core::{rewrite_css, rewrite_style_attribute};
use proptest::prelude::*;
use url::Url;

fn stylesheets() -> Vec<(String, String)> {
    fixtures("css")
        .into_iter()
        .filter(|(name, _)| name.ends_with(".css"))
        .map(|(name, bytes)| (name, String::from_utf8(bytes).unwrap()))
        .collect()
}

fn style_attributes() -> Vec<String> {
    let text = std::fs::read_to_string(tests_dir().join("fixtures/css/09_style_attributes.txt")).unwrap();
    text.lines().map(str::to_owned).collect()
}

fn stylesheet_url() -> Url {
    Url::parse(STYLESHEET_URL).unwrap()
}

#[test]
fn stylesheets_reference_third_parties() {
    for (name, css) in stylesheets() {
        assert!(!css_third_party_residue(&css, &stylesheet_url()).is_empty(), "{name}");
    }
}

#[test]
fn rewritten_stylesheets_have_no_third_party_residue() {
    for (name, css) in stylesheets() {
        let (out, _) = rewrite_css(&css, &stylesheet_url(), &origins());
        let residue = css_third_party_residue(&out, &stylesheet_url());
        assert!(residue.is_empty(), "{name}: {residue:?}");
    }
}

#[test]
fn only_url_tokens_change() {
    for (name, css) in stylesheets() {
        let (out, _) = rewrite_css(&css, &stylesheet_url(), &origins());
        assert_eq!(without_url_tokens(&css), without_url_tokens(&out), "{name}");
    }
}

#[test]
fn report_counts_every_rewritten_token() {
    for (name, css) in stylesheets() {
        let before = css_third_party_residue(&css, &stylesheet_url()).len() as u64;
        let (_, report) = rewrite_css(&css, &stylesheet_url(), &origins());
        assert_eq!(report.total(), before, "{name}");
    }
}

#[test]
fn rewriting_is_idempotent() {
    for (name, css) in stylesheets() {
        let (once, _) = rewrite_css(&css, &stylesheet_url(), &origins());
        let (twice, report) = rewrite_css(&once, &stylesheet_url(), &origins());
        assert_eq!(once, twice, "{name}");
        assert_eq!(report.total(), 0, "{name}");
    }
}

#[test]
fn output_matches_golden_files() {
    for (name, css) in stylesheets() {
        let (out, _) = rewrite_css(&css, &stylesheet_url(), &origins());
        check_golden("css", &name, &out).unwrap();
    }
}

#[test]
fn commented_and_quoted_urls_are_left_alone() {
    let css = std::fs::read_to_string(tests_dir().join("fixtures/css/05_comments_strings.css")).unwrap();
    let (out, _) = rewrite_css(&css, &stylesheet_url(), &origins());
    assert!(out.contains("/* background: url(http://third.com/commented.png); */"));
    assert!(out.contains(r#"content: "url(http://third.com/in-string.png)";"#));
    assert!(!out.contains("url(http://third.com/real.png)"));
}

#[test]
fn style_attributes_are_rewritten() {
    let document = Url::parse(DOCUMENT_URL).unwrap();
    for value in style_attributes() {
        let out = rewrite_style_attribute(&value, &document, &origins());
        assert!(css_third_party_residue(&out, &document).is_empty(), "{value}");
        assert_eq!(without_url_tokens(&value), without_url_tokens(&out), "{value}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn generated_stylesheets(parts in proptest::collection::vec(prop_oneof![
        "[a-z0-9/._-]{0,10}".prop_map(|p| format!("a {{ background: url({p}) }}\n")),
        "[a-z0-9/._-]{0,10}".prop_map(|p| format!("b {{ background: url('http://third.com/{p}') }}\n")),
        "[a-z0-9/._-]{0,10}".prop_map(|p| format!("@import \"//cdn.third.com/{p}\";\n")),
        "[a-z0-9/._-]{0,10}".prop_map(|p| format!("/* url(http://third.com/{p}) */\n")),
        "[a-z0-9 ]{0,10}".prop_map(|p| format!("c::after {{ content: \"url(http://x.com/) {p}\" }}\n")),
        Just("d { color: red; margin: 0 auto }\n".to_owned()),
        Just("e { background: url(data:image/png;base64,AAAA) }\n".to_owned()),
    ], 0..10)) {
        let css = parts.concat();
        let (once, _) = rewrite_css(&css, &stylesheet_url(), &origins());
        prop_assert!(css_third_party_residue(&once, &stylesheet_url()).is_empty());
        prop_assert_eq!(without_url_tokens(&css), without_url_tokens(&once));
        let (twice, _) = rewrite_css(&once, &stylesheet_url(), &origins());
        prop_assert_eq!(once, twice);
    }
}
