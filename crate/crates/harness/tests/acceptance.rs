//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Expected values come from oracles written here
//! (literal header sets, a hand percent-encoder, scraper scans), not from
//! the code under test.

#[path = "../../core/tests/support/corpus.rs"]
mod corpus;

use std::collections::BTreeSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use gateway_core::{decode, encode, rewrite_css, rewrite_style_attribute, ContextKind, ProxiedUrl};
use gateway_harness::scenario::STALE_UID;
use gateway_harness::{run_all, Scenario, ScenarioReport};
use gateway_server::trampoline_html;
use rand_chacha::rand_core::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use scraper::{Html, Selector};
use url::Url;

type Outcome = Result<String, String>;

const URL_COUNT: usize = 1000;
const URL_BUDGET: Duration = Duration::from_secs(5);
const HARNESS_BUDGET: Duration = Duration::from_secs(60);

const TABLE_ROWS: &[(&str, &str)] = &[
    ("link", "href"),
    ("img", "src"),
    ("audio", "src"),
    ("video", "src"),
    ("source", "src"),
    ("form", "action"),
    ("script", "src"),
    ("iframe", "src"),
    ("frame", "src"),
    ("a", "href"),
    ("object", "data"),
    ("embed", "src"),
    ("applet", "code"),
    ("applet", "archive"),
];

const REQUEST_FORBIDDEN: [&str; 5] = ["cookie", "referer", "if-modified-since", "if-none-match", "cache-control"];
const RESPONSE_FORBIDDEN: [&str; 4] = ["set-cookie", "etag", "last-modified", "cache-control"];

const PUBLISHED_TRAMPOLINE: &str = r#"var third_party = document.getElementsByTagName("a")[0];
if(window.top == window.self){
  third_party.target = "_blank";
  third_party.click();
  window.close();
}else{
  var iframe = document.createElement("iframe");
      iframe.name = "iframetarget";
  document.body.appendChild(iframe);
  third_party.target = "iframetarget";
  third_party.click();
}"#;

fn ensure(ok: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(message())
    }
}

/// Percent-encodes every byte except the RFC 3986 unreserved set.
fn oracle_pct(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'.' | b'_' | b'~' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items[(rng.next_u64() % items.len() as u64) as usize]
}

fn generated_url(rng: &mut ChaCha8Rng) -> String {
    const HOSTS: &[&str] = &[
        "tracker.example",
        "cdn.ads.net",
        "bücher.example",
        "日本.example",
        "10.0.0.7",
        "[2001:db8::1]",
        "a-b.c.d.example",
    ];
    const SEGMENTS: &[&str] =
        &["a", "ü", "日本語", "é%20x", "a+b", "~user", "x;y=1", "%E2%82%AC", "file.js", "", "..", "Ω"];
    const QUERY: &[&str] = &["a", "b=1", "q=ü", "x=a%26b", "y=1+2", "z=%3D", "u=http://x.example/?k=v", "€=€", "s=a b"];
    let mut url = format!("{}://{}", pick(rng, &["http", "https"]), pick(rng, HOSTS));
    if rng.next_u64().is_multiple_of(3) {
        url += &format!(":{}", 1 + rng.next_u64() % 65535);
    }
    for _ in 0..rng.next_u64() % 5 {
        url += "/";
        url += pick(rng, SEGMENTS);
    }
    if rng.next_u64().is_multiple_of(2) {
        let pairs: Vec<&str> = (0..1 + rng.next_u64() % 4).map(|_| pick(rng, QUERY)).collect();
        url += "?";
        url += &pairs.join("&");
    }
    if rng.next_u64().is_multiple_of(2) {
        url += "#";
        url += pick(rng, &["top", "s=1", "ü"]);
    }
    url
}

fn criterion_1() -> Outcome {
    let origins = corpus::origins();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let urls: Vec<String> = (0..URL_COUNT).map(|_| generated_url(&mut rng)).collect();
    let started = Instant::now();
    let mut unicode = 0;
    let mut queries = 0;
    for (i, raw) in urls.iter().enumerate() {
        let parsed = Url::parse(raw).map_err(|e| format!("{raw}: {e}"))?;
        let mut expected = parsed.clone();
        expected.set_fragment(None);
        let kind = if i % 2 == 0 { ContextKind::InContext } else { ContextKind::CrossContext };
        let proxied = ProxiedUrl::new(parsed, kind).map_err(|e| format!("{raw}: {e}"))?;
        let encoded = encode(&proxied, &origins);
        let param = if kind == ContextKind::InContext { "src" } else { "emb" };
        let oracle = format!("{}/?{param}={}", corpus::MIDDLE_PARTY, oracle_pct(expected.as_str()));
        ensure(encoded.as_str() == oracle, || format!("encode({raw}) = {encoded}, oracle {oracle}"))?;
        let decoded = decode(&encoded, &origins).map_err(|e| format!("decode({encoded}): {e}"))?;
        ensure(decoded.target() == &expected && decoded.kind() == kind, || {
            format!("{raw} came back as {}", decoded.target())
        })?;
        unicode += usize::from(!raw.is_ascii());
        queries += usize::from(expected.query().is_some());
    }
    let elapsed = started.elapsed();
    ensure(unicode > 100 && queries > 100, || format!("weak sample: {unicode} unicode, {queries} with query"))?;
    ensure(elapsed < URL_BUDGET, || format!("took {elapsed:?}"))?;
    Ok(format!("{URL_COUNT} URLs ({unicode} non-ASCII, {queries} with query) in {} ms", elapsed.as_millis()))
}

fn criterion_2() -> Outcome {
    let fixtures = corpus::fixtures("html");
    ensure(fixtures.len() >= 20, || format!("only {} fixtures", fixtures.len()))?;
    let mut covered = BTreeSet::new();
    for (name, bytes) in &fixtures {
        let input = String::from_utf8_lossy(bytes);
        for r in corpus::third_party_residue(&input) {
            covered.insert((r.element, r.attribute));
        }
        let (out, _) = corpus::rewrite_document(bytes);
        let residue = corpus::third_party_residue(&out);
        ensure(residue.is_empty(), || format!("{name}: residue {residue:?}"))?;
        let (again, report) = corpus::rewrite_document(out.as_bytes());
        ensure(again == out && report.total() == 0, || format!("{name}: second pass changed the document"))?;
        corpus::check_golden("html", name, &out)?;
    }
    let missing: Vec<_> =
        TABLE_ROWS.iter().filter(|(e, a)| !covered.contains(&(e.to_string(), a.to_string()))).collect();
    ensure(missing.is_empty(), || format!("rows without a third-party fixture: {missing:?}"))?;
    Ok(format!(
        "{} fixtures, {} rows covered, zero residue, idempotent, goldens match",
        fixtures.len(),
        TABLE_ROWS.len()
    ))
}

fn criterion_3() -> Outcome {
    let base = Url::parse(corpus::STYLESHEET_URL).unwrap();
    let document = Url::parse(corpus::DOCUMENT_URL).unwrap();
    let origins = corpus::origins();
    let sheets: Vec<(String, String)> = corpus::fixtures("css")
        .into_iter()
        .filter(|(name, _)| name.ends_with(".css"))
        .map(|(name, bytes)| (name, String::from_utf8(bytes).unwrap()))
        .collect();
    let attributes: Vec<String> =
        std::fs::read_to_string(corpus::tests_dir().join("fixtures/css/09_style_attributes.txt"))
            .map_err(|e| e.to_string())?
            .lines()
            .map(str::to_owned)
            .collect();

    let all: String = sheets.iter().map(|(_, css)| css.as_str()).collect();
    let features = [
        ("background-image", r"(?i)background(-image)?\s*:[^;}]*url\("),
        ("@font-face src", r"(?is)@font-face\s*\{[^}]*src\s*:[^}]*url\("),
        ("@import", r"(?i)@import\s"),
        ("data: URL", r#"(?i)url\(\s*["']?data:"#),
    ];
    for (feature, pattern) in features {
        ensure(Regex::new(pattern).unwrap().is_match(&all), || format!("no fixture covers {feature}"))?;
    }
    ensure(attributes.iter().any(|a| a.contains("url(")), || "no style attribute fixtures".into())?;

    let data_urls = |css: &str| corpus::css_urls(css).into_iter().filter(|u| u.starts_with("data:")).count();
    let mut tokens = 0;
    for (name, css) in &sheets {
        let before = corpus::css_third_party_residue(css, &base).len();
        ensure(before > 0, || format!("{name} has nothing to rewrite"))?;
        tokens += before;
        let (out, _) = rewrite_css(css, &base, &origins);
        let residue = corpus::css_third_party_residue(&out, &base);
        ensure(residue.is_empty(), || format!("{name}: residue {residue:?}"))?;
        ensure(corpus::without_url_tokens(css) == corpus::without_url_tokens(&out), || {
            format!("{name}: non-URL bytes changed")
        })?;
        ensure(data_urls(css) == data_urls(&out), || format!("{name}: data: URL altered"))?;
        corpus::check_golden("css", name, &out)?;
    }
    for value in &attributes {
        let out = rewrite_style_attribute(value, &document, &origins);
        ensure(corpus::css_third_party_residue(&out, &document).is_empty(), || {
            format!("style attribute residue: {out}")
        })?;
        ensure(corpus::without_url_tokens(value) == corpus::without_url_tokens(&out), || {
            format!("style attribute changed: {out}")
        })?;
    }
    Ok(format!(
        "{} stylesheets, {} style attributes, {tokens} third-party tokens rewritten",
        sheets.len(),
        attributes.len()
    ))
}

fn report(reports: &[ScenarioReport], scenario: Scenario) -> &ScenarioReport {
    reports.iter().find(|r| r.scenario == scenario.name()).expect("scenario ran")
}

fn criterion_4(reports: &[ScenarioReport]) -> Outcome {
    let r = report(reports, Scenario::GatedInContext);
    ensure(!r.observations.is_empty(), || "tracker saw nothing".into())?;
    let middle: Vec<_> = r.middle_fetches().collect();
    for name in REQUEST_FORBIDDEN {
        ensure(middle.iter().any(|f| f.request_header(name).is_some()), || {
            format!("browser never sent {name}; check is vacuous")
        })?;
    }
    ensure(middle.iter().any(|f| f.request_header("cookie") == Some(&format!("uid={STALE_UID}"))), || {
        "stale cookie not sent".into()
    })?;
    for obs in &r.observations {
        let leaked: Vec<_> = obs.header_names().into_iter().filter(|n| REQUEST_FORBIDDEN.contains(n)).collect();
        ensure(leaked.is_empty(), || format!("upstream request #{} {} carried {leaked:?}", obs.id, obs.path))?;
    }
    for fetch in &middle {
        let leaked: Vec<_> =
            fetch.response_headers.iter().map(|(n, _)| n.as_str()).filter(|n| RESPONSE_FORBIDDEN.contains(n)).collect();
        ensure(leaked.is_empty(), || format!("response to {} carried {leaked:?}", fetch.url))?;
    }
    Ok(format!("{} upstream requests and {} middle responses clean", r.observations.len(), middle.len()))
}

fn criterion_5(reports: &[ScenarioReport]) -> Outcome {
    let mut count = 0;
    for r in reports.iter().filter(|r| r.scenario != Scenario::Baseline.name()) {
        let expected = format!("default-src 'self' {}; object-src 'self'", r.endpoints.middle);
        for fetch in r.gateway_fetches() {
            if !fetch.response_header("content-type").any(|v| v.starts_with("text/html")) {
                continue;
            }
            let csp: Vec<&str> = fetch.response_header("content-security-policy").collect();
            ensure(csp == [expected.as_str()], || format!("{}: CSP {csp:?}, want {expected:?}", fetch.url))?;
            count += 1;
        }
    }
    ensure(count > 0, || "no HTML responses observed".into())?;
    Ok(format!("{count} HTML responses, each with exactly one matching CSP"))
}

fn criterion_6(reports: &[ScenarioReport]) -> Outcome {
    let r = report(reports, Scenario::RedirectChain);
    let landed = format!("{}/landed.js", r.endpoints.trackers[1]);
    let expected = format!("{}/?src={}", r.endpoints.middle, oracle_pct(&landed));
    let redirects: Vec<_> = r.middle_fetches().filter(|f| f.status == Some(301)).collect();
    ensure(!redirects.is_empty(), || "no 301 reached the browser".into())?;
    for fetch in &redirects {
        let location: Vec<&str> = fetch.response_header("location").collect();
        ensure(location == [expected.as_str()], || format!("Location {location:?}, want {expected}"))?;
    }
    ensure(r.fetches.iter().any(|f| f.url == expected && f.status == Some(200)), || {
        "browser did not follow the rewritten Location".into()
    })?;
    let tracker_host = r.endpoints.trackers[1].trim_start_matches("http://");
    ensure(r.observations.iter().any(|o| o.host == tracker_host && o.path == "/landed.js"), || {
        "second host never reached".into()
    })?;
    Ok(format!("Location = {expected}"))
}

fn criterion_7(reports: &[ScenarioReport], elapsed: Duration) -> Outcome {
    let baseline = report(reports, Scenario::Baseline);
    ensure(baseline.verdict.tracking_possible(), || format!("BASELINE {:?}", baseline.verdict))?;
    let in_context = report(reports, Scenario::GatedInContext);
    ensure(!in_context.verdict.user_recognized, || format!("GATED_IN_CONTEXT {:?}", in_context.verdict))?;
    let cross = report(reports, Scenario::GatedCrossContext);
    ensure(!cross.verdict.website_identified, || format!("GATED_CROSS_CONTEXT {:?}", cross.verdict))?;
    let failed: Vec<String> = reports
        .iter()
        .flat_map(|r| {
            r.checks.iter().filter(|c| !c.passed).map(move |c| format!("{}/{}: {}", r.scenario, c.name, c.detail))
        })
        .collect();
    ensure(failed.is_empty(), || format!("scenario checks failed: {failed:?}"))?;
    ensure(elapsed < HARNESS_BUDGET, || format!("full run took {elapsed:?}"))?;
    Ok(format!("{} scenarios in {} ms", reports.len(), elapsed.as_millis()))
}

fn criterion_8() -> Outcome {
    let html = trampoline_html(&Url::parse("http://third.com/page.html").unwrap());
    let golden_path = corpus::tests_dir().join("../../server/tests/golden/trampoline.html");
    let golden = std::fs::read_to_string(&golden_path).map_err(|e| format!("{}: {e}", golden_path.display()))?;
    ensure(html == golden, || "trampoline differs from golden file".into())?;
    let doc = Html::parse_document(&golden);
    let anchors: Vec<_> = doc.select(&Selector::parse("a").unwrap()).collect();
    ensure(anchors.len() == 1, || format!("{} anchors", anchors.len()))?;
    let rel: BTreeSet<&str> = anchors[0].value().attr("rel").unwrap_or("").split_ascii_whitespace().collect();
    ensure(rel == BTreeSet::from(["noreferrer", "noopener"]), || format!("rel {rel:?}"))?;
    let scripts: Vec<String> = doc.select(&Selector::parse("script").unwrap()).map(|s| s.text().collect()).collect();
    let squash = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    ensure(scripts.len() == 1 && squash(&scripts[0]) == squash(PUBLISHED_TRAMPOLINE), || "script text differs".into())?;
    Ok("one anchor, rel {noreferrer, noopener}, script verbatim".into())
}

fn main() -> ExitCode {
    let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
    let started = Instant::now();
    let reports = runtime.block_on(run_all(&Scenario::ALL, 1));
    let elapsed = started.elapsed();

    let scenario_outcome = |f: &dyn Fn(&[ScenarioReport]) -> Outcome| match &reports {
        Ok(reports) => f(reports),
        Err(err) => Err(format!("harness failed to run: {err}")),
    };
    let results: Vec<(&str, Outcome)> = vec![
        ("url_codec round trip", criterion_1()),
        ("HTML corpus", criterion_2()),
        ("CSS corpus", criterion_3()),
        ("header sanitization", scenario_outcome(&criterion_4)),
        ("CSP", scenario_outcome(&criterion_5)),
        ("Location rewriting", scenario_outcome(&criterion_6)),
        ("end-to-end verdicts", scenario_outcome(&|r| criterion_7(r, elapsed))),
        ("trampoline golden file", criterion_8()),
    ];

    let mut failed = 0;
    for (i, (name, outcome)) in results.iter().enumerate() {
        match outcome {
            Ok(detail) => println!("PASS criterion {} ({name}): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} ({name}): {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
