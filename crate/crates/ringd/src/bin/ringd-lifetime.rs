use std::sync::atomic::AtomicBool;

use clap::Parser;
use ringd::config::{BUS_ADDR_ENV, DEFAULT_BUS_ADDR};
use ringd_core::lifetime::DEFAULT_WINDOW;

/// Beam lifetime service: publishes LIFETIME:* from the beam current.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[arg(long, env = BUS_ADDR_ENV, default_value = DEFAULT_BUS_ADDR)]
    bus: String,
    /// Samples per fit window (overridden by LIFETIME:WINDOW-N).
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    ringd::lifetime::run_remote(&cli.bus, cli.window, &AtomicBool::new(false));
}
