//! Lifetime service: turns beam current events into the four lifetime
//! channels. The window length and an on/off switch are channels too and
//! are read on every event.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use log::{info, warn};
use ringd_core::lifetime::{Algorithm, LifetimeResult, SampleWindow, DEFAULT_WINDOW};
use ringd_core::{Status, TimedValue};

use crate::bus::{get_scalar_or, BusAccess, BusResult};
use crate::db;

/// Smallest window the service accepts from `LIFETIME:WINDOW-N`.
pub const MIN_WINDOW: usize = 2;
pub const MAX_WINDOW: usize = 100_000;

pub fn channel_for(alg: Algorithm) -> &'static str {
    match alg {
        Algorithm::TwoPoint => db::LIFETIME_TWOPOINT,
        Algorithm::LogFit => db::LIFETIME_LOGFIT,
        Algorithm::ExpFit => db::LIFETIME_EXPFIT,
        Algorithm::MedFilt => db::LIFETIME_MEDFILT,
    }
}

#[derive(Debug, Clone)]
pub struct LifetimeService {
    window: SampleWindow,
    /// Last valid lifetime per algorithm, republished with INVALID status
    /// when no new valid value exists.
    last: [f64; 4],
}

impl Default for LifetimeService {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

impl LifetimeService {
    pub fn new(window: usize) -> Self {
        Self { window: SampleWindow::new(window.clamp(MIN_WINDOW, MAX_WINDOW)), last: [0.0; 4] }
    }

    pub fn window(&self) -> &SampleWindow {
        &self.window
    }

    pub fn reset(&mut self) {
        self.window.clear();
    }

    /// Handles one current sample. Returns the per-algorithm results, or
    /// `None` when the service is disabled or the sample was unusable.
    pub fn on_sample(&mut self, bus: &(impl BusAccess + ?Sized), sample: &TimedValue) -> BusResult<Option<[LifetimeResult; 4]>> {
        let t = sample.timestamp;
        if get_scalar_or(bus, db::LIFETIME_ENABLE, 1.0) == 0.0 {
            self.publish_stale(bus, t)?;
            return Ok(None);
        }
        let n = get_scalar_or(bus, db::LIFETIME_WINDOW_N, self.window.capacity() as f64);
        if n.is_finite() && n >= 1.0 {
            let n = (n.round() as usize).clamp(MIN_WINDOW, MAX_WINDOW);
            if n != self.window.capacity() {
                self.window.set_capacity(n);
            }
        }
        let current = match (sample.status, sample.value.as_scalar()) {
            (Status::Ok, Some(i)) if i.is_finite() => i,
            _ => {
                self.publish_stale(bus, t)?;
                return Ok(None);
            }
        };
        match self.window.push_detecting_injection(t, current) {
            Ok(true) => info!("injection detected at t={t}, window cleared"),
            Ok(false) => {}
            Err(_) => {
                // time went backwards (simulator restart); start over
                self.window.clear();
                let _ = self.window.push(t, current);
            }
        }
        let mut out = Vec::with_capacity(4);
        for (k, alg) in Algorithm::ALL.into_iter().enumerate() {
            let r = self.window.evaluate(alg).unwrap_or(LifetimeResult { tau: 0.0, valid: false, algorithm: alg });
            let tv = if r.valid {
                self.last[k] = r.tau;
                TimedValue::new(r.tau, t)
            } else {
                TimedValue::invalid(self.last[k], t)
            };
            bus.publish(channel_for(alg), tv)?;
            out.push(r);
        }
        Ok(Some([out[0], out[1], out[2], out[3]]))
    }

    fn publish_stale(&self, bus: &(impl BusAccess + ?Sized), t: f64) -> BusResult<()> {
        for (k, alg) in Algorithm::ALL.into_iter().enumerate() {
            bus.publish(channel_for(alg), TimedValue::invalid(self.last[k], t))?;
        }
        Ok(())
    }

    /// Processes current events until `stop` is set or the bus goes away.
    pub fn run(&mut self, bus: &(impl BusAccess + ?Sized), stop: &AtomicBool) -> BusResult<()> {
        let sub = bus.monitor(db::BEAM_CURRENT)?;
        while !stop.load(Ordering::SeqCst) {
            match sub.recv_timeout(Duration::from_millis(200)) {
                Ok(ev) => self.on_sample(bus, &ev.value).map(|_| ())?,
                Err(crossbeam_channel::RecvTimeoutError::Timeout) => continue,
                Err(crossbeam_channel::RecvTimeoutError::Disconnected) => return Err(crate::BusError::Disconnected),
            }
        }
        Ok(())
    }
}

/// Runs the service against a remote bus, reconnecting with exponential
/// backoff. The window is cleared on every reconnect.
pub fn run_remote(addr: &str, window: usize, stop: &AtomicBool) {
    let mut svc = LifetimeService::new(window);
    let mut backoff = Duration::from_millis(250);
    while !stop.load(Ordering::SeqCst) {
        match crate::RemoteBus::connect(addr) {
            Ok(bus) => {
                backoff = Duration::from_millis(250);
                svc.reset();
                if let Err(e) = svc.run(&bus, stop) {
                    warn!("lifetime service lost the bus: {e}");
                }
            }
            Err(e) => warn!("cannot reach bus at {addr}: {e}"),
        }
        if !stop.load(Ordering::SeqCst) {
            std::thread::sleep(backoff);
            backoff = (backoff * 2).min(Duration::from_secs(10));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bus::Bus;
    use crate::sim::RingService;
    use ringd_core::ring::RingConfig;

    fn setup() -> (Bus, RingService) {
        let bus = Bus::new();
        let svc = RingService::with_database(&bus, RingConfig::noiseless(), 0.0).unwrap();
        (bus, svc)
    }

    #[test]
    fn disabled_keeps_last_value_invalid() {
        let (bus, mut ring) = setup();
        let mut lt = LifetimeService::default();
        for _ in 0..10 {
            let rb = ring.step(&bus, None).unwrap();
            lt.on_sample(&bus, &TimedValue::new(rb.current, rb.t)).unwrap();
        }
        let before = bus.get(db::LIFETIME_EXPFIT).unwrap();
        assert_eq!(before.status, Status::Ok);
        bus.put(db::LIFETIME_ENABLE, 0.0.into()).unwrap();
        let rb = ring.step(&bus, None).unwrap();
        assert!(lt.on_sample(&bus, &TimedValue::new(rb.current, rb.t)).unwrap().is_none());
        let after = bus.get(db::LIFETIME_EXPFIT).unwrap();
        assert_eq!(after.status, Status::Invalid);
        assert!(after.value.bit_eq(&before.value));
    }

    #[test]
    fn window_channel_is_honored() {
        let (bus, mut ring) = setup();
        let mut lt = LifetimeService::default();
        bus.put(db::LIFETIME_WINDOW_N, 10.0.into()).unwrap();
        for _ in 0..25 {
            let rb = ring.step(&bus, None).unwrap();
            lt.on_sample(&bus, &TimedValue::new(rb.current, rb.t)).unwrap();
        }
        assert_eq!(lt.window().len(), 10);
    }

    #[test]
    fn too_few_samples_are_invalid() {
        let (bus, _) = setup();
        let mut lt = LifetimeService::default();
        let r = lt.on_sample(&bus, &TimedValue::new(150.0, 1.0)).unwrap().unwrap();
        assert!(r.iter().all(|r| !r.valid));
        assert_eq!(bus.get(db::LIFETIME_MEDFILT).unwrap().status, Status::Invalid);
    }
}
