//! Scripted stand-in for the embedder, captioner, chat and judge servers.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mrag::mock::{MockScript, MockServer};

#[derive(Parser)]
#[command(name = "mock-server", version, about = "Deterministic scripted model server")]
struct Cli {
    #[arg(long, default_value_t = 8700)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// JSON script; see the README for the format.
    #[arg(long)]
    script: PathBuf,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let run = || -> anyhow::Result<()> {
        let script = MockScript::load(&cli.script)?;
        let server = MockServer::start(script, &format!("{}:{}", cli.host, cli.port))?;
        eprintln!("mock server on {}", server.url());
        server.wait();
        Ok(())
    };
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
