use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use cose::commands;
use cose::ingest::SourceFormat;
use cose::server::{serve, AppState};

#[derive(Parser)]
#[command(name = "cose", about = "Stroke embeddings and drawing completion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a DiDi or QuickDraw NDJSON file to the interchange schema.
    Ingest {
        #[arg(long, value_enum)]
        format: SourceFormat,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic flowchart corpus.
    Synth {
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Generator settings as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and write checkpoints; metrics go to stdout as NDJSON.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint and write the report as JSON.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Serve suggestions and rollouts over HTTP.
    Serve {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Ingest { format, input, out } => {
            let n = commands::ingest(&input, format, &out)?;
            tracing::info!(drawings = n, out = %out.display(), "ingested");
        }
        Command::Synth { n, seed, config, out } => commands::synth(n, seed, config.as_deref(), &out)?,
        Command::Train { data, config, out, seed } => {
            let cfg = commands::read_train_config(config.as_deref())?;
            let path = commands::train(&data, cfg, seed, &out, std::io::stdout().lock())?;
            tracing::info!(checkpoint = %path.display(), "training finished");
        }
        Command::Eval { ckpt, data, report, seed } => {
            let r = commands::eval(&ckpt, &data, seed, &report)?;
            tracing::info!(recon_cd = r.recon_cd, pred_cd = ?r.pred_cd, sc = ?r.sc, "evaluated");
        }
        Command::Serve { ckpt, port } => {
            let state = AppState::open(&ckpt)?;
            tokio::runtime::Runtime::new()?.block_on(serve(state, port))?;
        }
    }
    Ok(())
}
