//! The demo first-party site. Every page pulls something from the tracker;
//! first-party resources use relative URLs.

use axum::http::header::CONTENT_TYPE;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;

pub const PAGES: &[&str] = &["/", "/embed.html", "/redirect.html", "/styled.html"];

fn page(title: &str, head: &str, body: &str) -> String {
    format!(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{title}</title>\n{head}\n</head>\n<body>\n{body}\n</body>\n</html>\n"
    )
}

fn html(body: String) -> impl IntoResponse {
    ([(CONTENT_TYPE, "text/html; charset=utf-8")], body)
}

/// The site, with `tracker` as the origin of every third-party resource.
pub fn site(tracker: &str) -> Router {
    let index = page(
        "Daily news",
        &format!("<link rel=\"stylesheet\" href=\"/site.css\">\n<script src=\"{tracker}/track.js\"></script>"),
        &format!(
            "<h1>Today</h1>\n<img src=\"{tracker}/pixel.png\" alt=\"\" width=\"1\" height=\"1\">\n<p>Local team wins. <a href=\"/styled.html\">More</a></p>"
        ),
    );
    let embed = page(
        "Partner content",
        "",
        &format!(
            "<h1>From our partners</h1>\n<iframe src=\"{tracker}/frame.html\" width=\"300\" height=\"250\"></iframe>"
        ),
    );
    let redirect = page("Analytics", &format!("<script src=\"{tracker}/redirect\"></script>"), "<p>Counted.</p>");
    let styled = page(
        "Styled",
        &format!("<link rel=\"stylesheet\" href=\"{tracker}/style.css\">"),
        "<p>Themed by a third party.</p>",
    );
    Router::new()
        .route("/", get(move || async move { html(index) }))
        .route("/embed.html", get(move || async move { html(embed) }))
        .route("/redirect.html", get(move || async move { html(redirect) }))
        .route("/styled.html", get(move || async move { html(styled) }))
        .route("/site.css", get(|| async { ([(CONTENT_TYPE, "text/css")], "body { font-family: serif }\n") }))
}
