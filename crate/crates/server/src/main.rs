use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::time::Duration;

use anyhow::Context;
use clap::Parser;
use stlm_core::chat::ChatSettings;
use stlm_core::transformer::SamplerParams;
use stlm_server::{spawn, ModelSource, ServerConfig};
use tracing_subscriber::EnvFilter;

/// Serve the chat engine over HTTP and server-sent events.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[arg(long, env = "STLM_PORT", default_value_t = 8731)]
    port: u16,
    #[arg(long, env = "STLM_BIND", default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
    bind: IpAddr,
    /// Directory the model is downloaded into; also holds settings and transcripts.
    #[arg(long, env = "STLM_MODEL_DIR", default_value = "stlm-data")]
    model_dir: PathBuf,
    /// Manifest path or URL describing the model to fetch.
    #[arg(long, env = "STLM_MANIFEST", conflicts_with = "model")]
    manifest: Option<String>,
    /// Serve an existing model file instead of downloading one.
    #[arg(long, env = "STLM_MODEL")]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 15)]
    heartbeat_secs: u64,
    /// Sampling temperature; 0 is greedy.
    #[arg(long, default_value_t = 0.0)]
    temperature: f32,
    #[arg(long, default_value_t = 0)]
    top_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Pause after each streamed chunk, in milliseconds.
    #[arg(long, default_value_t = 0)]
    token_delay_ms: u64,
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let args = Args::parse();
    let source = match (args.manifest, args.model) {
        (Some(location), _) => ModelSource::Manifest {
            location,
            dir: args.model_dir.clone(),
        },
        (None, Some(path)) => ModelSource::File(path),
        (None, None) => ModelSource::None,
    };
    let config = ServerConfig {
        source,
        data_dir: args.model_dir,
        heartbeat: Duration::from_secs(args.heartbeat_secs),
        chat: ChatSettings {
            sampler: SamplerParams {
                temperature: args.temperature,
                top_k: args.top_k,
                seed: args.seed,
            },
            token_delay_ms: args.token_delay_ms,
            ..ChatSettings::default()
        },
    };
    let (addr, _state, server) = spawn(config, SocketAddr::new(args.bind, args.port))
        .await
        .context("starting server")?;
    tracing::info!("listening on http://{addr}");
    server.await??;
    Ok(())
}
