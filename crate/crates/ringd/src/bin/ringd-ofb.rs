use std::path::PathBuf;
use std::sync::atomic::AtomicBool;

use anyhow::Context;
use clap::{Parser, ValueEnum};
use ringd::config::{BUS_ADDR_ENV, DEFAULT_BUS_ADDR};
use ringd::ofb::OfbServer;
use ringd::snapshot::load_response;
use ringd::RemoteBus;
use ringd_core::feedback::Mode;

#[derive(Clone, Copy, ValueEnum)]
enum Plane {
    X,
    Y,
}

/// Slow orbit feedback server.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[arg(long, env = BUS_ADDR_ENV, default_value = DEFAULT_BUS_ADDR)]
    bus: String,
    /// Orbit response file.
    #[arg(long)]
    response: PathBuf,
    /// Loop period in seconds.
    #[arg(long, default_value_t = 1.0)]
    period: f64,
    /// stopped, passive or active.
    #[arg(long, default_value = "stopped")]
    mode: String,
    #[arg(long, value_enum, default_value = "x")]
    plane: Plane,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mode = Mode::parse(&cli.mode).with_context(|| format!("bad mode {:?}", cli.mode))?;
    let response = load_response(&cli.response).with_context(|| format!("loading {}", cli.response.display()))?;
    let bus = RemoteBus::connect(&cli.bus).with_context(|| format!("connecting to {}", cli.bus))?;
    let mut ofb = match cli.plane {
        Plane::X => OfbServer::new_horizontal(&response)?,
        Plane::Y => OfbServer::new_vertical(&response)?,
    };
    ofb.set_period(cli.period)?;
    ofb.start(&bus, mode)?;
    ofb.run(&bus, &AtomicBool::new(false))?;
    Ok(())
}
