//! Optics service: six physical parameters in, all magnet setpoints out.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use log::{info, warn};
use ringd_core::optics::{compute_currents, infer_params, AdjustmentParams, Inference, MagnetCurrents, OpticsSetup};
use ringd_core::{TimedValue, Value};

use crate::bus::{get_vector, BusAccess};
use crate::db;
use crate::error::{BusError, Result};

/// Reads the six parameter channels.
pub fn read_params(bus: &(impl BusAccess + ?Sized)) -> Result<AdjustmentParams> {
    let mut p = AdjustmentParams::default();
    for (name, key) in db::OPTICS_PARAMS.iter().zip(AdjustmentParams::NAMES) {
        let tv = bus.get(name)?;
        let x = tv.value.as_scalar().ok_or_else(|| BusError::ShapeMismatch { name: (*name).into(), detail: "not a scalar".into() })?;
        p.set_by_name(key, x)?;
    }
    Ok(p)
}

/// Writes the magnet setpoints for `p`, then the parameter and name
/// channels. Every call re-puts all vectors, so retrying after a partial
/// failure leaves the machine consistent.
pub fn apply(bus: &(impl BusAccess + ?Sized), setup: &OpticsSetup, p: &AdjustmentParams) -> Result<MagnetCurrents> {
    p.validate()?;
    let cur = compute_currents(setup, p)?;
    bus.put(db::QUAD, Value::Vector(cur.quad.clone()))?;
    bus.put(db::SEXT, Value::Vector(cur.sext.clone()))?;
    bus.put(db::BEND, Value::Vector(cur.bend.clone()))?;
    for (name, x) in db::OPTICS_PARAMS.iter().zip(p.to_array()) {
        bus.put(name, Value::Scalar(x))?;
    }
    bus.put(db::OPTICS_NAME, Value::Text(setup.name.clone()))?;
    Ok(cur)
}

/// Deduces the parameters from the magnet setpoints on the bus.
pub fn infer_from_bus(bus: &(impl BusAccess + ?Sized), setup: &OpticsSetup) -> Result<Inference> {
    let currents = MagnetCurrents { quad: get_vector(bus, db::QUAD)?, sext: get_vector(bus, db::SEXT)?, bend: get_vector(bus, db::BEND)? };
    Ok(infer_params(setup, &currents)?)
}

/// Re-applies the optics whenever a parameter channel or `OPTICS:APPLY`
/// is written.
pub struct OpticsServer {
    setup: OpticsSetup,
    applied: Option<AdjustmentParams>,
}

impl OpticsServer {
    pub fn new(setup: OpticsSetup) -> Self {
        Self { setup, applied: None }
    }

    pub fn setup(&self) -> &OpticsSetup {
        &self.setup
    }

    /// Applies the parameters currently on the bus unless they are the ones
    /// already applied (`force` re-applies anyway). Publishes the residuals
    /// of inferring the optics back from the setpoints.
    pub fn refresh(&mut self, bus: &(impl BusAccess + ?Sized), force: bool) -> Result<bool> {
        let p = read_params(bus)?;
        let changed = force || self.applied.as_ref() != Some(&p);
        if changed {
            apply(bus, &self.setup, &p)?;
            info!("applied optics {} with {:?}", self.setup.name, p.to_array());
            self.applied = Some(p);
        }
        match infer_from_bus(bus, &self.setup) {
            Ok(inf) => {
                let t = bus.get(db::QUAD)?.timestamp;
                bus.publish(db::OPTICS_RESIDUAL_QUAD, TimedValue::new(inf.residual_quad, t))?;
                bus.publish(db::OPTICS_RESIDUAL_SEXT, TimedValue::new(inf.residual_sext, t))?;
            }
            Err(e) => warn!("cannot infer optics from setpoints: {e}"),
        }
        Ok(changed)
    }

    pub fn run(&mut self, bus: &(impl BusAccess + ?Sized), stop: &AtomicBool) -> Result<()> {
        let mut names: Vec<&str> = db::OPTICS_PARAMS.to_vec();
        names.push(db::OPTICS_APPLY);
        let sub = bus.monitor_many(&names)?;
        self.refresh(bus, true)?;
        // the initial events of the monitor carry nothing new
        while sub.try_recv().is_ok() {}
        while !stop.load(Ordering::SeqCst) {
            match sub.recv_timeout(Duration::from_millis(200)) {
                Ok(ev) => {
                    // absorb a burst of parameter puts in one application
                    let mut force = ev.name.as_str() == db::OPTICS_APPLY;
                    while let Ok(ev) = sub.try_recv() {
                        force |= ev.name.as_str() == db::OPTICS_APPLY;
                    }
                    if let Err(e) = self.refresh(bus, force) {
                        warn!("optics application failed: {e}");
                        if let crate::Error::Bus(BusError::Disconnected) = e {
                            return Err(e);
                        }
                    }
                }
                Err(crossbeam_channel::RecvTimeoutError::Timeout) => {}
                Err(crossbeam_channel::RecvTimeoutError::Disconnected) => return Err(BusError::Disconnected.into()),
            }
        }
        Ok(())
    }
}
