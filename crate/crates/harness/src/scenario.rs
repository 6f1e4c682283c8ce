//! End-to-end scenarios. Each one starts a fresh site, tracker, rewrite
//! server and middle party on loopback ports, drives the emulated browser
//! through them and checks what the tracker ended up seeing.

use std::fmt;
use std::net::SocketAddr;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use gateway_core::policy::GENERIC_USER_AGENT;
use gateway_core::{build_csp, decode, encode, ContextKind, GatewayConfig, Origin, OriginSet, ProxiedUrl};
use gateway_server::{MiddleServer, RewriteServer, ServerError};
use serde::Serialize;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;
use url::Url;

use crate::browser::{BrowserError, EmulatedBrowser, FetchRecord, Initiator};
use crate::site::site;
use crate::tracker::{Tracker, TrackerObservation, LAST_MODIFIED_VALUE, UID_COOKIE};
use crate::verdict::LinkageVerdict;

/// Request headers that must never reach the tracker through the middle
/// party.
pub const UPSTREAM_FORBIDDEN: &[&str] = &["cookie", "referer", "if-modified-since", "if-none-match", "cache-control"];
/// Response headers that must never reach the browser from the middle
/// party.
pub const BROWSER_FORBIDDEN: &[&str] = &["set-cookie", "etag", "last-modified", "cache-control"];
/// Identifier planted in the browser as if left over from an old session.
pub const STALE_UID: &str = "42";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Browser(#[from] BrowserError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Baseline,
    GatedInContext,
    GatedCrossContext,
    RedirectChain,
    CssChain,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Baseline,
        Scenario::GatedInContext,
        Scenario::GatedCrossContext,
        Scenario::RedirectChain,
        Scenario::CssChain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Baseline => "BASELINE",
            Scenario::GatedInContext => "GATED_IN_CONTEXT",
            Scenario::GatedCrossContext => "GATED_CROSS_CONTEXT",
            Scenario::RedirectChain => "REDIRECT_CHAIN",
            Scenario::CssChain => "CSS_CHAIN",
        }
    }

    fn index(self) -> u64 {
        Scenario::ALL.iter().position(|s| *s == self).expect("listed") as u64
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = HarnessError;

    /// Case-insensitive; `-` and `_` are interchangeable.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.to_ascii_uppercase().replace('-', "_");
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == wanted)
            .ok_or_else(|| HarnessError::UnknownScenario(s.to_owned()))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &str, passed: bool, detail: impl Into<String>) -> Check {
    Check { name: name.to_owned(), passed, detail: detail.into() }
}

#[derive(Debug, Clone, Serialize)]
pub struct Endpoints {
    pub site: String,
    pub gateway: String,
    pub middle: String,
    pub trackers: [String; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub seed: u64,
    pub passed: bool,
    pub verdict: LinkageVerdict,
    pub tracking_possible: bool,
    pub checks: Vec<Check>,
    pub endpoints: Endpoints,
    pub observations: Vec<TrackerObservation>,
    pub fetches: Vec<FetchRecord>,
    pub elapsed_ms: u64,
}

impl ScenarioReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn middle_fetches(&self) -> impl Iterator<Item = &FetchRecord> {
        let middle: Option<Origin> = self.endpoints.middle.parse().ok();
        self.fetches.iter().filter(move |f| f.origin() == middle)
    }

    pub fn gateway_fetches(&self) -> impl Iterator<Item = &FetchRecord> {
        let gateway: Option<Origin> = self.endpoints.gateway.parse().ok();
        self.fetches.iter().filter(move |f| f.origin() == gateway)
    }

    /// Requests the browser sent straight to a tracker origin.
    pub fn direct_tracker_fetches(&self) -> impl Iterator<Item = &FetchRecord> {
        let trackers: Vec<Origin> = self.endpoints.trackers.iter().filter_map(|t| t.parse().ok()).collect();
        self.fetches.iter().filter(move |f| f.origin().is_some_and(|o| trackers.contains(&o)))
    }
}

/// The site, the tracker and both gateway servers, all on loopback.
pub struct Environment {
    pub tracker: Tracker,
    pub config: GatewayConfig,
    pub origins: OriginSet,
    pub rewrite: Arc<RewriteServer>,
    pub middle: Arc<MiddleServer>,
    site: SocketAddr,
    tasks: Vec<JoinHandle<()>>,
}

impl Environment {
    pub async fn start(seed: u64) -> Result<Environment, HarnessError> {
        let tracker = Tracker::start(seed).await?;
        let site_listener = TcpListener::bind("127.0.0.1:0").await?;
        let rewrite_listener = TcpListener::bind("127.0.0.1:0").await?;
        let middle_listener = TcpListener::bind("127.0.0.1:0").await?;
        let site_addr = site_listener.local_addr()?;
        let rewrite_addr = rewrite_listener.local_addr()?;
        let middle_addr = middle_listener.local_addr()?;

        let loopback = |addr: SocketAddr| -> Origin { format!("http://{addr}").parse().expect("loopback origin") };
        let upstream = Url::parse(&format!("http://{site_addr}/")).expect("loopback URL");
        let mut config = GatewayConfig::new(rewrite_addr, upstream, loopback(rewrite_addr), loopback(middle_addr));
        config.middle.listen = middle_addr;
        let config = config.validated().map_err(ServerError::from)?;
        let origins = config.origins().map_err(|e| ServerError::from(gateway_core::ConfigError::from(e)))?;
        let rewrite = Arc::new(RewriteServer::new(config.clone())?);
        let middle = Arc::new(MiddleServer::new(&config)?);

        let mut tasks = Vec::new();
        let site_app = site(&tracker.origin());
        tasks.push(tokio::spawn(async move {
            let _ = axum::serve(site_listener, site_app).await;
        }));
        for (listener, app) in
            [(rewrite_listener, rewrite.clone().router()), (middle_listener, middle.clone().router())]
        {
            tasks.push(tokio::spawn(async move {
                let _ = gateway_server::serve(listener, app, None).await;
            }));
        }
        Ok(Environment { tracker, config, origins, rewrite, middle, site: site_addr, tasks })
    }

    pub fn site_origin(&self) -> String {
        format!("http://{}", self.site)
    }

    pub fn gateway_origin(&self) -> String {
        self.origins.first_party().to_string()
    }

    pub fn middle_origin(&self) -> String {
        self.origins.middle_party().to_string()
    }

    /// Where the middle party serves `target` in context.
    pub fn middle_url(&self, target: &str) -> Url {
        let target = Url::parse(target).expect("absolute target");
        encode(&ProxiedUrl::new(target, ContextKind::InContext).expect("http target"), &self.origins)
    }

    pub fn expected_csp(&self) -> String {
        build_csp(&self.origins, &self.config.csp)
    }

    pub fn endpoints(&self) -> Endpoints {
        Endpoints {
            site: self.site_origin(),
            gateway: self.gateway_origin(),
            middle: self.middle_origin(),
            trackers: [self.tracker.origin(), self.tracker.secondary_origin()],
        }
    }
}

impl Drop for Environment {
    fn drop(&mut self) {
        for task in &self.tasks {
            task.abort();
        }
    }
}

/// Seed for the tracker's identifiers in one scenario of a run.
pub fn scenario_seed(run_seed: u64, scenario: Scenario) -> u64 {
    run_seed.wrapping_add(scenario.index())
}

pub async fn run_scenario(scenario: Scenario, seed: u64) -> Result<ScenarioReport, HarnessError> {
    let started = Instant::now();
    let env = Environment::start(scenario_seed(seed, scenario)).await?;
    let mut browser = EmulatedBrowser::new()?;
    let gateway = env.gateway_origin();
    let site = env.site_origin();

    let page = match scenario {
        Scenario::Baseline => format!("{site}/"),
        Scenario::GatedInContext => format!("{gateway}/"),
        Scenario::GatedCrossContext => format!("{gateway}/embed.html"),
        Scenario::RedirectChain => format!("{gateway}/redirect.html"),
        Scenario::CssChain => format!("{gateway}/styled.html"),
    };
    if scenario == Scenario::GatedInContext {
        // Identifiers a tracker could have planted on the middle origin
        // before; none of them may travel upstream.
        let middle = env.middle_origin();
        browser.seed_cookie(&middle, UID_COOKIE, STALE_UID)?;
        let track = env.middle_url(&format!("{}/track.js", env.tracker.origin()));
        browser.seed_validators(track.as_str(), &format!("\"{STALE_UID}\""), LAST_MODIFIED_VALUE)?;
    }
    for visit in ["visit-1", "visit-2"] {
        env.tracker.set_session(visit);
        browser.visit(&page).await?;
    }

    let observations = env.tracker.observations();
    let verdict = LinkageVerdict::from_observations(&observations, &[site.clone(), gateway.clone()]);
    let mut report = ScenarioReport {
        scenario: scenario.name().to_owned(),
        seed,
        passed: false,
        tracking_possible: verdict.tracking_possible(),
        verdict,
        checks: Vec::new(),
        endpoints: env.endpoints(),
        observations,
        fetches: browser.into_fetches(),
        elapsed_ms: 0,
    };
    report.checks = match scenario {
        Scenario::Baseline => baseline_checks(&report),
        Scenario::GatedInContext => in_context_checks(&report, &env),
        Scenario::GatedCrossContext => cross_context_checks(&report, &env),
        Scenario::RedirectChain => redirect_checks(&report, &env),
        Scenario::CssChain => css_checks(&report, &env),
    };
    if scenario != Scenario::Baseline {
        report.checks.push(csp_check(&report, &env));
    }
    report.passed = report.checks.iter().all(|c| c.passed);
    report.elapsed_ms = started.elapsed().as_millis() as u64;
    Ok(report)
}

/// Runs scenarios one after another.
pub async fn run_all(scenarios: &[Scenario], seed: u64) -> Result<Vec<ScenarioReport>, HarnessError> {
    let mut reports = Vec::new();
    for scenario in scenarios {
        reports.push(run_scenario(*scenario, seed).await?);
    }
    Ok(reports)
}

fn baseline_checks(r: &ScenarioReport) -> Vec<Check> {
    let direct = r.direct_tracker_fetches().count();
    vec![
        check("tracking_possible", r.verdict.tracking_possible(), format!("{:?}", r.verdict)),
        check("tracker_contacted_directly", direct > 0, format!("{direct} direct fetches")),
    ]
}

fn in_context_checks(r: &ScenarioReport, env: &Environment) -> Vec<Check> {
    let direct = r.direct_tracker_fetches().count();
    let leaked: Vec<String> = r
        .observations
        .iter()
        .flat_map(|o| {
            o.header_names().into_iter().filter(|n| UPSTREAM_FORBIDDEN.contains(n)).map(|n| format!("#{} {n}", o.id))
        })
        .collect();
    let user_agents: Vec<&str> = r.observations.iter().filter_map(|o| o.user_agent.as_deref()).collect();
    let sent_to_middle: Vec<&str> = UPSTREAM_FORBIDDEN
        .iter()
        .copied()
        .filter(|name| r.middle_fetches().any(|f| f.request_header(name).is_some()))
        .collect();
    let returned: Vec<String> = r
        .middle_fetches()
        .flat_map(|f| {
            f.response_headers
                .iter()
                .filter(|(n, _)| BROWSER_FORBIDDEN.contains(&n.as_str()))
                .map(move |(n, _)| format!("#{} {n}", f.id))
        })
        .collect();
    let tracker_paths: Vec<&str> = r.observations.iter().map(|o| o.path.as_str()).collect();
    vec![
        check("user_not_recognized", !r.verdict.user_recognized, format!("{:?}", r.verdict)),
        check("site_not_identified", !r.verdict.website_identified, format!("{:?}", r.verdict)),
        check(
            "tracker_reached_via_middle",
            tracker_paths.contains(&"/track.js") && tracker_paths.contains(&"/pixel.png"),
            format!("tracker saw {tracker_paths:?}"),
        ),
        check("no_direct_tracker_contact", direct == 0, format!("{direct} direct fetches")),
        check(
            "browser_sent_tracking_headers",
            sent_to_middle.len() == UPSTREAM_FORBIDDEN.len(),
            format!("sent to middle: {sent_to_middle:?}"),
        ),
        check("upstream_headers_stripped", leaked.is_empty(), format!("leaked: {leaked:?}")),
        check(
            "generic_user_agent",
            !user_agents.is_empty() && user_agents.iter().all(|ua| *ua == GENERIC_USER_AGENT),
            format!("{user_agents:?}"),
        ),
        check("browser_response_stripped", returned.is_empty(), format!("returned: {returned:?}")),
        check(
            "middle_used_expected_urls",
            r.middle_fetches().any(|f| f.url == env.middle_url(&format!("{}/track.js", env.tracker.origin())).as_str()),
            "track.js requested at its encapsulated URL",
        ),
    ]
}

fn cross_context_checks(r: &ScenarioReport, env: &Environment) -> Vec<Check> {
    let frame_url = format!("{}/frame.html", env.tracker.origin());
    let trampolines: Vec<&FetchRecord> = r
        .middle_fetches()
        .filter(|f| {
            Url::parse(&f.url)
                .is_ok_and(|u| decode(&u, &env.origins).is_ok_and(|p| p.kind() == ContextKind::CrossContext))
        })
        .collect();
    let frames: Vec<&FetchRecord> =
        r.direct_tracker_fetches().filter(|f| f.url == frame_url && f.initiator == Initiator::Frame).collect();
    let frame_referers: Vec<&str> = frames.iter().filter_map(|f| f.request_header("referer")).collect();
    vec![
        check("site_not_identified", !r.verdict.website_identified, format!("{:?}", r.verdict)),
        check(
            "iframe_served_trampoline",
            trampolines.len() == 2 && trampolines.iter().all(|f| f.status == Some(200)),
            format!("{} trampoline fetches", trampolines.len()),
        ),
        check(
            "trampoline_reached_target",
            frames.len() == 2 && frame_referers.is_empty(),
            format!("{} frame loads, referers {frame_referers:?}", frames.len()),
        ),
    ]
}

fn redirect_checks(r: &ScenarioReport, env: &Environment) -> Vec<Check> {
    let landed = format!("{}/landed.js", env.tracker.secondary_origin());
    let redirects: Vec<&FetchRecord> = r.middle_fetches().filter(|f| f.status == Some(301)).collect();
    let locations: Vec<&str> = redirects.iter().flat_map(|f| f.response_header("location")).collect();
    let on_middle = |l: &&str| {
        Url::parse(l).is_ok_and(|u| {
            Origin::of(&u).as_ref() == Some(env.origins.middle_party())
                && decode(&u, &env.origins)
                    .is_ok_and(|p| p.target().as_str() == landed && p.kind() == ContextKind::InContext)
        })
    };
    let landed_obs: Vec<&TrackerObservation> =
        r.observations.iter().filter(|o| o.path == "/landed.js" && env.tracker.hosts()[1] == o.host).collect();
    vec![
        check(
            "location_on_middle_origin",
            !locations.is_empty() && locations.iter().all(on_middle),
            format!("{locations:?}"),
        ),
        check(
            "second_host_reached_via_middle",
            landed_obs.len() == 2
                && landed_obs
                    .iter()
                    .all(|o| o.user_agent.as_deref() == Some(GENERIC_USER_AGENT) && o.cookies.is_empty()),
            format!("{} requests for landed.js", landed_obs.len()),
        ),
        check("no_direct_tracker_contact", r.direct_tracker_fetches().count() == 0, ""),
        check("user_not_recognized", !r.verdict.user_recognized, format!("{:?}", r.verdict)),
    ]
}

fn css_checks(r: &ScenarioReport, env: &Environment) -> Vec<Check> {
    let via_middle =
        |path: &str| {
            r.observations.iter().filter(|o| o.path == path).all(|o| {
                o.user_agent.as_deref() == Some(GENERIC_USER_AGENT) && o.referer.is_none() && o.cookies.is_empty()
            }) && r.observations.iter().any(|o| o.path == path)
        };
    let font_url = env.middle_url(&format!("{}/font.woff", env.tracker.origin()));
    vec![
        check("font_via_middle", via_middle("/font.woff"), "font.woff arrived stripped"),
        check("import_via_middle", via_middle("/imported.css"), "imported.css arrived stripped"),
        check("background_via_middle", via_middle("/bg.png"), "bg.png arrived stripped"),
        check(
            "font_url_encapsulated",
            r.middle_fetches().any(|f| f.url == font_url.as_str()),
            format!("expected fetch of {font_url}"),
        ),
        check("no_direct_tracker_contact", r.direct_tracker_fetches().count() == 0, ""),
        check("user_not_recognized", !r.verdict.user_recognized, format!("{:?}", r.verdict)),
    ]
}

fn csp_check(r: &ScenarioReport, env: &Environment) -> Check {
    let expected = env.expected_csp();
    let html: Vec<&FetchRecord> =
        r.gateway_fetches().filter(|f| f.response_header("content-type").any(|v| v.starts_with("text/html"))).collect();
    let bad: Vec<String> = html
        .iter()
        .filter(|f| f.response_header("content-security-policy").collect::<Vec<_>>() != [expected.as_str()])
        .map(|f| f.url.clone())
        .collect();
    check(
        "single_gateway_csp",
        !html.is_empty() && bad.is_empty(),
        format!("{} HTML responses, wrong CSP on {bad:?}", html.len()),
    )
}
