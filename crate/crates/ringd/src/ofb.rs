//! Slow orbit feedback server, one instance per plane.
//!
//! Control channel puts are picked up by [`OfbServer::absorb_controls`] at
//! iteration boundaries only. Mask and frequency-step changes are accepted
//! while the loop is stopped; a rejected setting is overwritten with the
//! value in force so the channel always shows what the loop uses.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use log::{info, warn};
use ringd_core::feedback::{FeedbackLoop, Iteration, Mode, DEFAULT_FREQ_WEIGHT};
use ringd_core::{Status, TimedValue, Value};

use crate::bus::{get_vector, BusAccess};
use crate::db::{self, FeedbackChannels};
use crate::error::{BusError, Error, Result};
use crate::snapshot::ResponseFile;

/// BPM data older than this many periods stops the loop.
pub const STALE_PERIODS: f64 = 3.0;
pub const MAX_PERIOD: f64 = 3600.0;

/// What one call to [`OfbServer::iterate`] did.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Stopped,
    /// The BPM timestamp has not moved since the last iteration.
    NoNewData,
    /// BPM data is stale or invalid; telemetry was marked INVALID.
    Stale,
    /// Every singular value is masked; telemetry was marked INVALID.
    AllDisabled,
    Done(Iteration),
}

pub struct OfbServer {
    ch: FeedbackChannels,
    lp: FeedbackLoop,
    mode: Mode,
    period: f64,
    gain: f64,
    f_step: f64,
    /// RF offset found on the bus when the loop was started; the loop's own
    /// frequency offset is added to it.
    rf_base: f64,
    last_bpm_t: Option<f64>,
    /// Feedback clock reading when the BPM timestamp last advanced.
    last_fresh: Option<f64>,
}

impl OfbServer {
    pub fn new_horizontal(resp: &ResponseFile) -> Result<Self> {
        let fc = resp.freq_column();
        let lp = FeedbackLoop::new(&resp.r_x, Some(&fc), DEFAULT_FREQ_WEIGHT)?;
        Ok(Self::with_loop(db::OFB_X, lp))
    }

    pub fn new_vertical(resp: &ResponseFile) -> Result<Self> {
        let r_y = resp.r_y.as_ref().ok_or_else(|| Error::Config("response file has no vertical matrix".into()))?;
        let lp = FeedbackLoop::new(r_y, None, 0.0)?;
        Ok(Self::with_loop(db::OFB_Y, lp))
    }

    fn with_loop(ch: FeedbackChannels, lp: FeedbackLoop) -> Self {
        Self {
            ch,
            lp,
            mode: Mode::Stopped,
            period: db::DEFAULT_PERIOD,
            gain: db::DEFAULT_GAIN,
            f_step: ringd_core::feedback::DEFAULT_F_STEP,
            rf_base: 0.0,
            last_bpm_t: None,
            last_fresh: None,
        }
    }

    pub fn channels(&self) -> &FeedbackChannels {
        &self.ch
    }

    pub fn feedback(&self) -> &FeedbackLoop {
        &self.lp
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn mask(&self) -> &[bool] {
        self.lp.corrector().mask()
    }

    /// Replaces the singular value mask. Only allowed while stopped.
    pub fn configure_mask(&mut self, mask: &[bool]) -> Result<()> {
        if self.mode != Mode::Stopped {
            return Err(Error::BadTransition(format!("mask change while {}", self.mode.as_str())));
        }
        self.lp.corrector_mut().set_mask(mask)?;
        Ok(())
    }

    pub fn configure_f_step(&mut self, f_step: f64) -> Result<()> {
        if self.mode != Mode::Stopped {
            return Err(Error::BadTransition(format!("frequency step change while {}", self.mode.as_str())));
        }
        if !(f_step > 0.0 && f_step.is_finite()) {
            return Err(ringd_core::Error::BadValue("frequency step must be positive").into());
        }
        self.f_step = f_step;
        Ok(())
    }

    pub fn set_gain(&mut self, gain: f64) -> Result<()> {
        if !(gain > 0.0 && gain <= 2.0) {
            return Err(ringd_core::Error::BadValue("gain must be in (0, 2]").into());
        }
        self.gain = gain;
        Ok(())
    }

    pub fn set_period(&mut self, period: f64) -> Result<()> {
        if !(period > 0.0 && period <= MAX_PERIOD) {
            return Err(ringd_core::Error::BadValue("period out of range").into());
        }
        self.period = period;
        Ok(())
    }

    /// Starts (or switches) the loop. Leaving STOPPED forgets the previous
    /// run's accumulated kicks and takes the present RF offset as the base.
    pub fn start(&mut self, bus: &(impl BusAccess + ?Sized), mode: Mode) -> Result<()> {
        if mode == Mode::Stopped {
            self.stop();
            return Ok(());
        }
        if self.mode == Mode::Stopped {
            self.lp.reset();
            self.rf_base = match self.ch.rf {
                Some(rf) => bus.get(rf)?.value.as_scalar().unwrap_or(0.0),
                None => 0.0,
            };
            self.last_bpm_t = None;
            self.last_fresh = None;
            info!("{} started {}", self.ch.mode, mode.as_str());
        }
        self.mode = mode;
        Ok(())
    }

    pub fn stop(&mut self) {
        if self.mode != Mode::Stopped {
            info!("{} stopped", self.ch.mode);
        }
        self.mode = Mode::Stopped;
    }

    /// Publishes the settings in force to the control channels.
    pub fn publish_controls(&self, bus: &(impl BusAccess + ?Sized)) -> Result<()> {
        let t = bus.get(self.ch.mode)?.timestamp;
        let pubv = |name: &str, v: Value| bus.publish(name, TimedValue::new(v, t));
        pubv(self.ch.mode, Value::Text(self.mode.as_str().into()))?;
        pubv(self.ch.period, self.period.into())?;
        pubv(self.ch.gain, self.gain.into())?;
        pubv(self.ch.mask, mask_value(self.mask()))?;
        if let Some(f) = self.ch.f_step {
            pubv(f, self.f_step.into())?;
        }
        Ok(())
    }

    /// Reads the control channels and applies what changed. Mask and step
    /// changes are judged against the mode before this boundary, so a mask
    /// put followed by a mode put is accepted in one go.
    pub fn absorb_controls(&mut self, bus: &(impl BusAccess + ?Sized)) -> Result<()> {
        let mut rejected = false;

        let mask_on_bus = get_vector(bus, self.ch.mask)?;
        let mask: Option<Vec<bool>> =
            mask_on_bus.iter().map(|&x| if x == 1.0 { Some(true) } else if x == 0.0 { Some(false) } else { None }).collect();
        match mask {
            Some(m) if m.as_slice() != self.mask() => {
                if let Err(e) = self.configure_mask(&m) {
                    warn!("{} rejected: {e}", self.ch.mask);
                    rejected = true;
                }
            }
            Some(_) => {}
            None => {
                warn!("{} rejected: entries must be 0 or 1", self.ch.mask);
                rejected = true;
            }
        }
        if let Some(name) = self.ch.f_step {
            let f = bus.get(name)?.value.as_scalar().unwrap_or(f64::NAN);
            if f != self.f_step && self.configure_f_step(f).map_err(|e| warn!("{name} rejected: {e}")).is_err() {
                rejected = true;
            }
        }
        let gain = bus.get(self.ch.gain)?.value.as_scalar().unwrap_or(f64::NAN);
        if gain != self.gain && self.set_gain(gain).map_err(|e| warn!("{} rejected: {e}", self.ch.gain)).is_err() {
            rejected = true;
        }
        let period = bus.get(self.ch.period)?.value.as_scalar().unwrap_or(f64::NAN);
        if period != self.period && self.set_period(period).map_err(|e| warn!("{} rejected: {e}", self.ch.period)).is_err() {
            rejected = true;
        }
        match bus.get(self.ch.mode)?.value.as_text().and_then(Mode::parse) {
            Some(m) if m != self.mode => self.start(bus, m)?,
            Some(_) => {}
            None => {
                warn!("{} rejected: not a mode", self.ch.mode);
                rejected = true;
            }
        }
        if rejected {
            self.publish_controls(bus)?;
        }
        Ok(())
    }

    /// One feedback iteration. `now` is the feedback's own clock in seconds
    /// and is only used to judge staleness.
    pub fn iterate(&mut self, bus: &(impl BusAccess + ?Sized), now: f64) -> Result<Outcome> {
        if self.mode == Mode::Stopped {
            return Ok(Outcome::Stopped);
        }
        let bpm = bus.get(self.ch.bpm)?;
        let fresh = self.last_bpm_t.is_none_or(|t| bpm.timestamp > t);
        if fresh {
            self.last_bpm_t = Some(bpm.timestamp);
            self.last_fresh = Some(now);
        }
        let age = now - self.last_fresh.unwrap_or(now);
        if bpm.status == Status::Invalid || age > STALE_PERIODS * self.period {
            self.publish_invalid(bus, bpm.timestamp)?;
            return Ok(Outcome::Stale);
        }
        if !fresh {
            return Ok(Outcome::NoNewData);
        }
        let orbit = bpm.value.as_vector().ok_or_else(|| BusError::ShapeMismatch { name: self.ch.bpm.into(), detail: "not a vector".into() })?;
        let active = self.mode == Mode::Active;
        let it = match self.lp.iterate(orbit, self.gain, self.f_step, active) {
            Ok(it) => it,
            Err(ringd_core::Error::AllDisabled) => {
                self.publish_invalid(bus, bpm.timestamp)?;
                return Ok(Outcome::AllDisabled);
            }
            Err(e) => return Err(e.into()),
        };
        if active {
            let mut set = get_vector(bus, self.ch.correctors)?;
            if set.len() != it.kick_delta.len() {
                return Err(BusError::ShapeMismatch { name: self.ch.correctors.into(), detail: "corrector count differs from the response".into() }.into());
            }
            set.iter_mut().zip(&it.kick_delta).for_each(|(s, d)| *s += d);
            bus.put(self.ch.correctors, Value::Vector(set))?;
            if let Some(rf) = self.ch.rf {
                bus.put(rf, Value::Scalar(self.rf_base + it.df_applied))?;
            }
        }
        self.publish_telemetry(bus, &it, bpm.timestamp)?;
        Ok(Outcome::Done(it))
    }

    fn publish_telemetry(&self, bus: &(impl BusAccess + ?Sized), it: &Iteration, t: f64) -> Result<()> {
        bus.publish(self.ch.kick_rms, TimedValue::new(it.kick_rms, t))?;
        bus.publish(self.ch.kick_mean, TimedValue::new(it.kick_mean, t))?;
        if let Some(df) = self.ch.df {
            bus.publish(df, TimedValue::new(it.df_applied, t))?;
        }
        bus.publish(self.ch.orbit_rms, TimedValue::new(it.orbit_rms, t))?;
        bus.publish(self.ch.iterations, TimedValue::new(self.lp.iterations() as f64, t))?;
        Ok(())
    }

    /// Marks the telemetry INVALID, keeping the last values.
    fn publish_invalid(&self, bus: &(impl BusAccess + ?Sized), t: f64) -> Result<()> {
        let names = [Some(self.ch.kick_rms), Some(self.ch.kick_mean), self.ch.df, Some(self.ch.orbit_rms), Some(self.ch.iterations)];
        for name in names.into_iter().flatten() {
            let last = bus.get(name)?;
            bus.publish(name, TimedValue { value: last.value, timestamp: t.max(last.timestamp), status: Status::Invalid })?;
        }
        Ok(())
    }

    /// Runs the loop at the configured period until `stop` is set.
    pub fn run(&mut self, bus: &(impl BusAccess + ?Sized), stop: &AtomicBool) -> Result<()> {
        self.publish_controls(bus)?;
        let clock = Instant::now();
        while !stop.load(Ordering::SeqCst) {
            let started = Instant::now();
            let step = self.absorb_controls(bus).and_then(|_| self.iterate(bus, clock.elapsed().as_secs_f64()));
            match step {
                Ok(Outcome::Stale) => warn!("{}: BPM data stale", self.ch.mode),
                Ok(Outcome::AllDisabled) => warn!("{}: every singular value is disabled", self.ch.mode),
                Ok(_) => {}
                Err(e @ Error::Bus(BusError::Disconnected)) => return Err(e),
                Err(e) => warn!("{}: iteration failed: {e}", self.ch.mode),
            }
            let wait = Duration::from_secs_f64(self.period).saturating_sub(started.elapsed());
            let deadline = Instant::now() + wait;
            while !stop.load(Ordering::SeqCst) && Instant::now() < deadline {
                std::thread::sleep((deadline - Instant::now()).min(Duration::from_millis(50)));
            }
        }
        Ok(())
    }
}

pub fn mask_value(mask: &[bool]) -> Value {
    Value::Vector(mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
}
