use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use redress_service::{build_state, start, ServiceConfig};

/// Serve the reporting API.
#[derive(Debug, Parser)]
#[command(name = "redress-server", version)]
struct Args {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Address to bind.
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    /// Load the fixture world, sessions and key when no saved state exists.
    #[arg(long)]
    seed_fixtures: bool,
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt().with_max_level(tracing::Level::INFO).init();
    let args = Args::parse();
    let config = match &args.config {
        Some(path) => ServiceConfig::load(path),
        None => Ok(ServiceConfig::default()),
    };
    let config = match config {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let state = match build_state(&config, args.seed_fixtures) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let service = match start(state, SocketAddr::new(args.host, args.port)).await {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    println!("listening on {}", service.base_url());
    let _ = tokio::signal::ctrl_c().await;
    service.stop().await;
    ExitCode::SUCCESS
}
