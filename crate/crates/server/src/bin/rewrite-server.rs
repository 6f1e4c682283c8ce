use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use gateway_core::{GatewayConfig, Origin};
use gateway_server::{serve, RewriteServer};
use tokio::net::TcpListener;
use tracing::{error, info};
use url::Url;

/// Reverse proxy that rewrites a site's pages to route third-party content
/// through the middle party.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// JSON config file. Without it, all four address flags are required.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    listen: Option<SocketAddr>,
    /// Address of the original web server.
    #[arg(long)]
    upstream: Option<Url>,
    #[arg(long)]
    middle_origin: Option<Origin>,
    #[arg(long)]
    first_party_origin: Option<Origin>,
}

fn config(args: Args) -> Result<GatewayConfig, String> {
    let mut config = match args.config {
        Some(path) => GatewayConfig::load(&path).map_err(|e| e.to_string())?,
        None => match (&args.listen, &args.upstream, &args.first_party_origin, &args.middle_origin) {
            (Some(listen), Some(upstream), Some(first), Some(middle)) => {
                GatewayConfig::new(*listen, upstream.clone(), first.clone(), middle.clone())
            }
            _ => return Err(
                "either --config or all of --listen, --upstream, --first-party-origin and --middle-origin are required"
                    .into(),
            ),
        },
    };
    if let Some(listen) = args.listen {
        config.listen = listen;
    }
    if let Some(upstream) = args.upstream {
        config.upstream = upstream;
    }
    if let Some(origin) = args.first_party_origin {
        config.first_party_origin = origin;
    }
    if let Some(origin) = args.middle_origin {
        config.middle_origin = origin;
    }
    config.validated().map_err(|e| e.to_string())
}

#[tokio::main]
async fn main() -> ExitCode {
    gateway_server::init_logging();
    let config = match config(Args::parse()) {
        Ok(config) => config,
        Err(err) => {
            error!("{err}");
            return ExitCode::FAILURE;
        }
    };
    let listen = config.listen;
    let tls = config.tls.clone();
    let server = match RewriteServer::new(config) {
        Ok(server) => Arc::new(server),
        Err(err) => {
            error!("{err}");
            return ExitCode::FAILURE;
        }
    };
    let listener = match TcpListener::bind(listen).await {
        Ok(listener) => listener,
        Err(err) => {
            error!("cannot listen on {listen}: {err}");
            return ExitCode::FAILURE;
        }
    };
    info!(%listen, upstream = %server.config().upstream, "rewrite server listening");
    match serve(listener, server.router(), tls.as_ref()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            error!("{err}");
            ExitCode::FAILURE
        }
    }
}
