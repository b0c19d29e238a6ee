use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;

use clap::{Parser, Subcommand};
use log::info;
use ringd::archiver::{export_csv, query, record, Policy};
use ringd::config::{BUS_ADDR_ENV, DEFAULT_BUS_ADDR};
use ringd::tools::{exit_code, format_value_line, EXIT_OTHER};
use ringd::RemoteBus;

/// Channel archiver.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Append the channels selected by a policy file to a store.
    Record {
        #[arg(long, env = BUS_ADDR_ENV, default_value = DEFAULT_BUS_ADDR)]
        bus: String,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the records of one channel in a time window.
    Query {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = f64::NEG_INFINITY, allow_hyphen_values = true)]
        from: f64,
        #[arg(long, default_value_t = f64::INFINITY, allow_hyphen_values = true)]
        to: f64,
        /// Write CSV here instead of printing.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> ringd::Result<()> {
    match cli.cmd {
        Cmd::Record { bus, policy, out } => {
            let policy = Policy::read(&policy)?;
            let bus = RemoteBus::connect(&bus)?;
            let stats = record(&bus, &policy, &out, &AtomicBool::new(false))?;
            info!("recorded {} records of {} channels", stats.records, stats.channels);
        }
        Cmd::Query { store, name, from, to, csv } => {
            let series = query(&store, &name, from, to)?;
            for c in &series.corrupt {
                eprintln!("warning: corrupt record at byte {}: {}", c.offset, c.message);
            }
            match csv {
                Some(path) => export_csv(&series, &path, true)?,
                None => {
                    for r in &series.records {
                        println!("{}", format_value_line(&name, r));
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e).clamp(EXIT_OTHER, 255) as u8)
        }
    }
}
