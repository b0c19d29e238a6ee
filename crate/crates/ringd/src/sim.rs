//! The ring simulator attached to the bus.
//!
//! Each step reads every setpoint channel first, so a step sees one
//! consistent set of machine settings, then advances the physics and
//! publishes the readbacks stamped with simulated time.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::warn;
use ringd_core::ring::{Readback, Ring, RingConfig};
use ringd_core::TimedValue;

use crate::bus::{get_scalar_or, get_vector, Bus, BusAccess, BusResult};
use crate::db;
use crate::error::Result;

pub struct RingService {
    ring: Ring,
}

impl RingService {
    /// Simulated time starts at `t0` (pass the wall clock for a live
    /// machine, `0.0` in tests).
    pub fn new(cfg: RingConfig, t0: f64) -> Result<Self> {
        Ok(Self { ring: Ring::new(cfg, t0)? })
    }

    /// Creates the machine database on an in-process bus and returns the
    /// simulator for it.
    pub fn with_database(bus: &Bus, cfg: RingConfig, t0: f64) -> Result<Self> {
        let svc = Self::new(cfg, t0)?;
        db::create_machine_channels(bus, svc.ring.config(), svc.ring.tune_model(), t0)?;
        Ok(svc)
    }

    pub fn ring(&self) -> &Ring {
        &self.ring
    }

    pub fn ring_mut(&mut self) -> &mut Ring {
        &mut self.ring
    }

    /// Copies the setpoint channels into the machine. A setpoint that
    /// cannot be read keeps its previous value.
    pub fn read_setpoints(&mut self, bus: &(impl BusAccess + ?Sized)) -> BusResult<()> {
        let r = &mut self.ring;
        let vectors: [(&str, fn(&mut Ring, &[f64]) -> ringd_core::Result<()>); 5] = [
            (db::COR_X, Ring::set_correctors_x),
            (db::COR_Y, Ring::set_correctors_y),
            (db::QUAD, Ring::set_quadrupoles),
            (db::SEXT, Ring::set_sextupoles),
            (db::BEND, Ring::set_bends),
        ];
        for (name, set) in vectors {
            match get_vector(bus, name) {
                Ok(v) => {
                    if let Err(e) = set(r, &v) {
                        warn!("ignoring {name}: {e}");
                    }
                }
                Err(e @ (crate::BusError::Disconnected | crate::BusError::Timeout)) => return Err(e),
                Err(e) => warn!("cannot read {name}: {e}"),
            }
        }
        let df = get_scalar_or(bus, db::RF_DELTA_F, r.rf_delta_f());
        if let Err(e) = r.set_rf_delta_f(df) {
            warn!("ignoring {}: {e}", db::RF_DELTA_F);
        }
        let top = r.top_up();
        let enabled = get_scalar_or(bus, db::TOPUP_ENABLE, if top.enabled { 1.0 } else { 0.0 }) != 0.0;
        let threshold = get_scalar_or(bus, db::TOPUP_THRESHOLD, db::DEFAULT_TOPUP_THRESHOLD);
        let refill = get_scalar_or(bus, db::TOPUP_REFILL, db::DEFAULT_TOPUP_REFILL);
        if enabled != top.enabled || threshold != top.threshold || refill != top.refill_to {
            if let Err(e) = r.set_top_up(enabled, threshold, refill) {
                warn!("ignoring top-up settings: {e}");
            }
        }
        Ok(())
    }

    pub fn publish(&self, bus: &(impl BusAccess + ?Sized), rb: &Readback) -> BusResult<()> {
        let t = rb.t;
        bus.publish(db::BEAM_CURRENT, TimedValue::new(rb.current, t))?;
        bus.publish(db::BPM_X, TimedValue::new(rb.bpm_x.clone(), t))?;
        bus.publish(db::BPM_Y, TimedValue::new(rb.bpm_y.clone(), t))?;
        bus.publish(db::TUNE_X, TimedValue::new(rb.tune_x, t))?;
        bus.publish(db::TUNE_Y, TimedValue::new(rb.tune_y, t))?;
        bus.publish(db::CHROM_X, TimedValue::new(rb.chrom_x, t))?;
        bus.publish(db::CHROM_Y, TimedValue::new(rb.chrom_y, t))?;
        bus.publish(db::TRUE_LIFETIME, TimedValue::new(rb.true_lifetime, t))
    }

    /// One step of `dt` seconds (the configured step when `None`).
    pub fn step(&mut self, bus: &(impl BusAccess + ?Sized), dt: Option<f64>) -> Result<Readback> {
        self.read_setpoints(bus)?;
        let rb = self.ring.step(dt.unwrap_or(self.ring.config().dt))?;
        self.publish(bus, &rb)?;
        Ok(rb)
    }

    /// Adds beam and publishes the new current at once.
    pub fn inject(&mut self, bus: &(impl BusAccess + ?Sized), delta: f64) -> Result<f64> {
        let i = self.ring.inject(delta)?;
        bus.publish(db::BEAM_CURRENT, TimedValue::new(i, self.ring.time()))?;
        Ok(i)
    }

    /// Free-running ticker: one step per `dt / speedup` wall seconds until
    /// `stop` is set.
    pub fn run(mut self, bus: &(impl BusAccess + ?Sized), stop: &AtomicBool) -> Result<()> {
        let cfg = self.ring.config();
        let interval = Duration::from_secs_f64(cfg.dt / cfg.speedup);
        let mut next = Instant::now() + interval;
        while !stop.load(Ordering::SeqCst) {
            let now = Instant::now();
            if now < next {
                std::thread::sleep((next - now).min(Duration::from_millis(100)));
                continue;
            }
            next += interval;
            if next < now {
                // fell behind; do not try to catch up in a burst
                next = now + interval;
            }
            if let Err(e) = self.step(bus, None) {
                warn!("simulation step failed: {e}");
                if matches!(e, crate::Error::Bus(crate::BusError::Disconnected)) {
                    return Err(e);
                }
            }
        }
        Ok(())
    }
}

/// Convenience for the daemon: runs the ticker on its own thread.
pub fn spawn(svc: RingService, bus: Bus, stop: Arc<AtomicBool>) -> std::io::Result<std::thread::JoinHandle<()>> {
    std::thread::Builder::new().name("ring-sim".into()).spawn(move || {
        if let Err(e) = svc.run(&bus, &stop) {
            log::error!("simulator stopped: {e}");
        }
    })
}
