use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;

use clap::{Parser, Subcommand};
use ringd::config::{BUS_ADDR_ENV, DEFAULT_BUS_ADDR};
use ringd::optics::{apply, infer_from_bus, read_params, OpticsServer};
use ringd::snapshot::{load_optics, save_snapshot, Snapshot};
use ringd::tools::{exit_code, EXIT_OTHER};
use ringd::{db, BusAccess, Error, RemoteBus};
use ringd_core::optics::AdjustmentParams;

/// Optics control: physical parameters to magnet setpoints.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[arg(long, global = true, env = BUS_ADDR_ENV, default_value = DEFAULT_BUS_ADDR)]
    bus: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Apply the parameters on the bus, changed by any --param, with an optics file.
    Apply {
        #[arg(long)]
        optics: PathBuf,
        /// Parameter override, e.g. D-NU-X=0.01 or d_nu_x=0.01.
        #[arg(long = "param", value_parser = parse_param, allow_hyphen_values = true)]
        params: Vec<(String, f64)>,
    },
    /// Save the parameter channels to a snapshot file.
    Save {
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the parameters stored in a snapshot file with an optics file.
    Restore {
        #[arg(long)]
        optics: PathBuf,
        file: PathBuf,
    },
    /// Deduce the parameters from the magnet setpoints on the bus.
    Infer {
        #[arg(long)]
        optics: PathBuf,
    },
    /// Re-apply the optics whenever a parameter channel changes.
    Serve {
        #[arg(long)]
        optics: PathBuf,
    },
}

fn parse_param(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or("expected name=value")?;
    let v: f64 = v.trim().parse().map_err(|e| format!("{v}: {e}"))?;
    // d_nu_x and D-NU-X both name the same parameter
    let key = k.trim().to_ascii_uppercase().replace('_', "-");
    if !AdjustmentParams::NAMES.contains(&key.as_str()) {
        return Err(format!("unknown parameter {k}; known: {}", AdjustmentParams::NAMES.join(", ")));
    }
    Ok((key, v))
}

fn print_params(p: &AdjustmentParams) {
    for (k, v) in AdjustmentParams::NAMES.iter().zip(p.to_array()) {
        println!("{k} {v:?}");
    }
}

fn run(cli: Cli) -> ringd::Result<()> {
    let bus = RemoteBus::connect(&cli.bus)?;
    match cli.cmd {
        Cmd::Apply { optics, params } => {
            let setup = load_optics(&optics, None)?;
            let mut p = read_params(&bus)?;
            for (k, v) in params {
                p.set_by_name(&k, v)?;
            }
            apply(&bus, &setup, &p)?;
            print_params(&p);
        }
        Cmd::Save { out } => {
            let name = bus.get(db::OPTICS_NAME)?.value.as_text().map(str::to_owned);
            let report = save_snapshot(&bus, &db::OPTICS_PARAMS, name.as_deref())?;
            report.snapshot.write(&out)?;
        }
        Cmd::Restore { optics, file } => {
            let setup = load_optics(&optics, None)?;
            let snap = Snapshot::read(&file)?;
            let mut p = read_params(&bus)?;
            for (name, key) in db::OPTICS_PARAMS.iter().zip(AdjustmentParams::NAMES) {
                if let Some(v) = snap.get(name) {
                    let x = v.as_scalar().ok_or_else(|| Error::Config(format!("{name} in {} is not a scalar", file.display())))?;
                    p.set_by_name(key, x)?;
                }
            }
            apply(&bus, &setup, &p)?;
            print_params(&p);
        }
        Cmd::Infer { optics } => {
            let setup = load_optics(&optics, None)?;
            let inf = infer_from_bus(&bus, &setup)?;
            print_params(&inf.params);
            println!("residual_quad {:?}", inf.residual_quad);
            println!("residual_sext {:?}", inf.residual_sext);
        }
        Cmd::Serve { optics } => {
            let setup = load_optics(&optics, None)?;
            OpticsServer::new(setup).run(&bus, &AtomicBool::new(false))?;
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
