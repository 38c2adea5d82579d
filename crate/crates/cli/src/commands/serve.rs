use std::net::SocketAddr;
use std::process::ExitCode;
use std::sync::mpsc;
use std::time::Duration;

use clap::Args;
use onepixel_core::OracleSpec;
use onepixel_server::{spawn, ServerConfig};
use serde_json::json;

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Address to listen on; port 0 picks a free port
    #[arg(long, default_value = "127.0.0.1:5000")]
    pub bind: SocketAddr,

    /// Backing synthetic oracle
    #[arg(
        long,
        value_name = "SPEC",
        default_value = "planted:base=0.97,trigger=255-255-0,w=0.5,delta=-0.95"
    )]
    pub oracle: OracleSpec,

    /// Delay added to every prediction, in milliseconds
    #[arg(long, value_name = "MS", default_value_t = 0)]
    pub latency_ms: u64,

    /// Fraction of predictions answered with 503
    #[arg(long, default_value_t = 0.0)]
    pub failure_rate: f64,

    /// Seed for failure injection
    #[arg(long, default_value_t = 0)]
    pub failure_seed: u64,
}

pub fn run(args: ServeArgs) -> anyhow::Result<ExitCode> {
    let handle = spawn(ServerConfig {
        bind: args.bind,
        oracle: args.oracle.clone(),
        latency: Duration::from_millis(args.latency_ms),
        failure_rate: args.failure_rate,
        failure_seed: args.failure_seed,
    })?;
    let (tx, rx) = mpsc::channel();
    ctrlc::set_handler(move || {
        let _ = tx.send(());
    })?;
    println!(
        "{}",
        json!({ "endpoint": handle.endpoint(), "oracle": args.oracle.to_string() })
    );
    tracing::info!(endpoint = %handle.endpoint(), "serving; press Ctrl-C to stop");
    let _ = rx.recv();
    tracing::info!("shutting down");
    handle.shutdown()?;
    Ok(ExitCode::SUCCESS)
}
