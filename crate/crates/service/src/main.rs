//! `opiaid-service`: serves recommendations and curves over HTTP.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::Parser;

use opiaid_core::domain::{DoseGrid, UtilityWeights};
use opiaid_service::{router, AppState, ServiceConfig};

#[derive(Parser)]
#[command(version, about = "Dose recommendation HTTP service")]
struct Args {
    /// Model bundle loaded at startup and by a reload without a path.
    #[arg(long)]
    model_artifact: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Dose grid `min:max:step` replacing the model's own.
    #[arg(long, value_parser = |s: &str| DoseGrid::parse(s).map_err(|e| e.to_string()))]
    grid: Option<DoseGrid>,
    /// Weights `w_pain,w_orades` used when a request omits them.
    #[arg(long, default_value = "0.5,0.5", value_parser = |s: &str| UtilityWeights::parse(s).map_err(|e| e.to_string()))]
    default_weights: UtilityWeights,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let config = ServiceConfig {
        model_artifact: args.model_artifact,
        grid: args.grid,
        default_weights: args.default_weights,
    };
    let state = match AppState::new(config) {
        Ok(s) => Arc::new(s),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let addr = SocketAddr::new(args.host, args.port);
    let listener = match tokio::net::TcpListener::bind(addr).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: bind {addr}: {e}");
            return ExitCode::from(1);
        }
    };
    eprintln!("listening on {addr}");
    match axum::serve(listener, router(state)).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
