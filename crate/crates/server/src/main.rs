use std::path::PathBuf;
use std::process::ExitCode;

use advrepair_core::config::{ConfigError, RunConfig};
use advrepair_server::{serve, AppState};
use clap::Parser;

/// Serve detection and repair over HTTP.
#[derive(Parser, Debug)]
#[command(name = "advrepair-server", version)]
struct Args {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:8080")]
    listen: String,
    /// Flat key = value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<PathBuf>>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    classifier_url: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    #[arg(long)]
    translator_url: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

fn load(args: &Args) -> Result<AppState, ConfigError> {
    let file = match &args.config {
        Some(p) => RunConfig::load_file(p)?,
        None => RunConfig::default(),
    };
    let flags = RunConfig {
        models: args.models.clone(),
        embeddings: args.embeddings.clone(),
        classifier_url: args.classifier_url.clone(),
        labels: args.labels.clone(),
        translator_url: args.translator_url.clone(),
        epsilon: args.epsilon,
        calibration: args.calibration.clone(),
        workers: args.workers,
        ..Default::default()
    };
    let defaults = file.merge(flags);
    let epsilon = defaults.resolve_epsilon()?;
    let backends = defaults.load_backends(epsilon)?;
    Ok(AppState { backends, defaults })
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let state = match load(&args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(if e.is_io() { 2 } else { 1 });
        }
    };
    let listener = match tokio::net::TcpListener::bind(&args.listen).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: cannot listen on {}: {e}", args.listen);
            return ExitCode::from(2);
        }
    };
    if let Ok(addr) = listener.local_addr() {
        eprintln!("listening on http://{addr}");
    }
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    match serve(listener, state, shutdown).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
