use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use log::{error, info};
use ringd::bus::{Bus, SystemClock, Clock};
use ringd::config::{load_ring_config, BUS_ADDR_ENV, DEFAULT_BUS_ADDR};
use ringd::lifetime::LifetimeService;
use ringd::ofb::OfbServer;
use ringd::optics::OpticsServer;
use ringd::sim::{self, RingService};
use ringd::snapshot::{load_optics, save_optics, save_response, ResponseFile};
use ringd::{server, tools, RemoteBus};
use ringd_core::feedback::Mode;
use ringd_core::optics::OpticsSetup;
use ringd_core::ring::RingConfig;

/// Simulated storage ring control system.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct BusArg {
    /// Bus address (host:port).
    #[arg(long, env = BUS_ADDR_ENV, default_value = DEFAULT_BUS_ADDR)]
    bus: String,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the bus, the ring simulator and the selected services.
    Serve {
        /// Address to listen on.
        #[arg(long, env = BUS_ADDR_ENV, default_value = DEFAULT_BUS_ADDR)]
        listen: String,
        /// Ring configuration (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Simulated seconds per wall second.
        #[arg(long)]
        speedup: Option<f64>,
        /// Comma separated: sim, lifetime, optics, ofb, ofb-y.
        #[arg(long, default_value = "sim,lifetime,optics,ofb", value_delimiter = ',')]
        services: Vec<String>,
        /// Optics file for the optics service; generated from the ring when absent.
        #[arg(long)]
        optics: Option<PathBuf>,
        /// Initial mode of the horizontal feedback.
        #[arg(long, default_value = "STOPPED")]
        ofb_mode: String,
    },
    /// Print `<name> <ts> <value>` for each channel.
    Get {
        #[command(flatten)]
        bus: BusArg,
        #[arg(required = true)]
        names: Vec<String>,
    },
    /// Write a value; vectors are given as separate words.
    Put {
        #[command(flatten)]
        bus: BusArg,
        name: String,
        #[arg(required = true, allow_hyphen_values = true)]
        value: Vec<String>,
    },
    /// Print events, starting with the current values.
    Monitor {
        #[command(flatten)]
        bus: BusArg,
        /// Stop after this many events.
        #[arg(long)]
        count: Option<usize>,
        #[arg(required = true)]
        names: Vec<String>,
    },
    /// List channel names, optionally filtered by a glob.
    List {
        #[command(flatten)]
        bus: BusArg,
        pattern: Option<String>,
    },
    /// Save the channels matching the globs to a snapshot file.
    Save {
        #[command(flatten)]
        bus: BusArg,
        #[arg(long)]
        out: PathBuf,
        /// Optics name recorded in the header.
        #[arg(long)]
        optics: Option<String>,
        #[arg(required = true)]
        patterns: Vec<String>,
    },
    /// Put every value of a snapshot file.
    Restore {
        #[command(flatten)]
        bus: BusArg,
        file: PathBuf,
    },
    /// Write the optics file matching a ring configuration.
    GenOptics {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "user")]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the orbit response file matching a ring configuration.
    GenResponse {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn ring_config(path: Option<&PathBuf>) -> anyhow::Result<RingConfig> {
    Ok(match path {
        Some(p) => load_ring_config(p)?,
        None => RingConfig::default(),
    })
}

fn connect(bus: &BusArg) -> Result<RemoteBus, ExitCode> {
    RemoteBus::connect(&bus.bus).map_err(|e| {
        eprintln!("error: cannot reach bus at {}: {e}", bus.bus);
        ExitCode::from(tools::EXIT_OTHER as u8)
    })
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let daemon = matches!(cli.cmd, Cmd::Serve { .. });
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if daemon { "info" } else { "warn" })).init();
    let (out, err) = (&mut std::io::stdout(), &mut std::io::stderr());
    let never = AtomicBool::new(false);
    match cli.cmd {
        Cmd::Serve { listen, config, speedup, services, optics, ofb_mode } => match serve(listen, config, speedup, services, optics, ofb_mode) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                error!("{e:#}");
                ExitCode::FAILURE
            }
        },
        Cmd::Get { bus, names } => match connect(&bus) {
            Ok(b) => code(tools::cmd_get(&b, &names, out, err)),
            Err(c) => c,
        },
        Cmd::Put { bus, name, value } => match connect(&bus) {
            Ok(b) => code(tools::cmd_put(&b, &name, &value, err)),
            Err(c) => c,
        },
        Cmd::Monitor { bus, count, names } => match connect(&bus) {
            Ok(b) => code(tools::cmd_monitor(&b, &names, count, &never, out, err)),
            Err(c) => c,
        },
        Cmd::List { bus, pattern } => match connect(&bus) {
            Ok(b) => code(tools::cmd_list(&b, pattern.as_deref(), out, err)),
            Err(c) => c,
        },
        Cmd::Save { bus, out: path, optics, patterns } => match connect(&bus) {
            Ok(b) => code(tools::cmd_save(&b, &patterns, optics.as_deref(), &path, err)),
            Err(c) => c,
        },
        Cmd::Restore { bus, file } => match connect(&bus) {
            Ok(b) => code(tools::cmd_restore(&b, &file, err)),
            Err(c) => c,
        },
        Cmd::GenOptics { config, name, out: path } => report(|| {
            let ring = ringd_core::ring::Ring::new(ring_config(config.as_ref())?, 0.0)?;
            save_optics(&path, &OpticsSetup::generate(&name, ring.tune_model())?)?;
            Ok(())
        }),
        Cmd::GenResponse { config, out: path } => report(|| {
            let model = ringd_core::lattice::derive_response(&ring_config(config.as_ref())?)?;
            save_response(&path, &ResponseFile::from(&model))?;
            Ok(())
        }),
    }
}

fn report(f: impl FnOnce() -> anyhow::Result<()>) -> ExitCode {
    match f() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let c = e.downcast_ref::<ringd::Error>().map_or(tools::EXIT_OTHER, tools::exit_code);
            code(c)
        }
    }
}

fn serve(
    listen: String,
    config: Option<PathBuf>,
    speedup: Option<f64>,
    services: Vec<String>,
    optics: Option<PathBuf>,
    ofb_mode: String,
) -> anyhow::Result<()> {
    let mut cfg = ring_config(config.as_ref())?;
    if let Some(s) = speedup {
        cfg.speedup = s;
    }
    cfg.validate()?;
    let known = ["sim", "lifetime", "optics", "ofb", "ofb-y"];
    if let Some(bad) = services.iter().find(|s| !known.contains(&s.as_str())) {
        bail!("unknown service {bad:?}; known: {}", known.join(", "));
    }
    let on = |s: &str| services.iter().any(|x| x == s);
    let mode = Mode::parse(&ofb_mode).with_context(|| format!("bad feedback mode {ofb_mode:?}"))?;

    let bus = Bus::new();
    let t0 = SystemClock.now();
    let ring = RingService::with_database(&bus, cfg, t0)?;
    let response = ResponseFile::from(ring.ring().response());
    let tunes = ring.ring().tune_model().clone();
    let stop = Arc::new(AtomicBool::new(false));
    let mut threads = Vec::new();

    if on("lifetime") {
        let (bus, stop) = (bus.clone(), stop.clone());
        threads.push(std::thread::Builder::new().name("lifetime".into()).spawn(move || {
            if let Err(e) = LifetimeService::default().run(&bus, &stop) {
                error!("lifetime service stopped: {e}");
            }
        })?);
    }
    if on("optics") {
        let setup = match &optics {
            Some(p) => load_optics(p, Some(&tunes))?,
            None => OpticsSetup::generate("user", &tunes)?,
        };
        let (bus, stop) = (bus.clone(), stop.clone());
        threads.push(std::thread::Builder::new().name("optics".into()).spawn(move || {
            if let Err(e) = OpticsServer::new(setup).run(&bus, &stop) {
                error!("optics service stopped: {e}");
            }
        })?);
    }
    for (name, vertical) in [("ofb", false), ("ofb-y", true)] {
        if !on(name) {
            continue;
        }
        let mut ofb = if vertical { OfbServer::new_vertical(&response)? } else { OfbServer::new_horizontal(&response)? };
        if !vertical {
            ofb.start(&bus, mode)?;
        }
        let (bus, stop) = (bus.clone(), stop.clone());
        threads.push(std::thread::Builder::new().name(name.into()).spawn(move || {
            if let Err(e) = ofb.run(&bus, &stop) {
                error!("{name} stopped: {e}");
            }
        })?);
    }
    if on("sim") {
        threads.push(sim::spawn(ring, bus.clone(), stop.clone())?);
    }
    let handle = server::serve(bus, &listen).with_context(|| format!("cannot listen on {listen}"))?;
    info!("serving on {}", handle.local_addr());
    handle.wait();
    Ok(())
}
