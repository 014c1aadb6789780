use std::path::PathBuf;

use clap::Parser;

use paneldp_server::{serve, ServerConfig, ServerState};

/// Differentially private verification server for confidential panel data.
#[derive(Parser)]
#[command(name = "paneldp-server", version)]
struct Args {
    /// Path to the TOML configuration file.
    #[arg(long)]
    config: PathBuf,
}

#[tokio::main]
async fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let args = Args::parse();
    let config = match ServerConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("failed to load config: {e}");
            std::process::exit(1);
        }
    };
    let state = match ServerState::from_config(config) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("failed to start: {e}");
            std::process::exit(1);
        }
    };
    tracing::info!(
        rows = state.data.n_rows(),
        entities = state.data.n_entities(),
        "dataset loaded"
    );
    if let Err(e) = serve(state, |addr| tracing::info!(%addr, "listening")).await {
        eprintln!("server error: {e}");
        std::process::exit(1);
    }
}
