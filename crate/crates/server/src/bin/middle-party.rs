use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;
use gateway_core::GatewayConfig;
use gateway_server::{serve, MiddleServer};
use tokio::net::TcpListener;
use tracing::{error, info};

/// Middle-party server: forwards encapsulated third-party requests without
/// their tracking state.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// JSON config file shared with the rewrite server; the `middle` section
    /// and the origins are used.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `middle.listen`.
    #[arg(long)]
    listen: Option<SocketAddr>,
}

#[tokio::main]
async fn main() -> ExitCode {
    gateway_server::init_logging();
    let args = Args::parse();
    let mut config = match GatewayConfig::load(&args.config) {
        Ok(config) => config,
        Err(err) => {
            error!("{err}");
            return ExitCode::FAILURE;
        }
    };
    if let Some(listen) = args.listen {
        config.middle.listen = listen;
    }
    let server = match MiddleServer::new(&config) {
        Ok(server) => Arc::new(server),
        Err(err) => {
            error!("{err}");
            return ExitCode::FAILURE;
        }
    };
    let listen = config.middle.listen;
    let listener = match TcpListener::bind(listen).await {
        Ok(listener) => listener,
        Err(err) => {
            error!("cannot listen on {listen}: {err}");
            return ExitCode::FAILURE;
        }
    };
    info!(%listen, origin = %config.middle_origin, "middle party listening");
    match serve(listener, server.router(), config.middle.tls.as_ref()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            error!("{err}");
            ExitCode::FAILURE
        }
    }
}
