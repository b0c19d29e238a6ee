//! Storage ring physics: beam current decay with top-up, closed orbit from
//! corrector kicks, RF frequency and perturbations, and linear tune and
//! chromaticity maps.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{derive_response, Lattice, ResponseModel, TuneModel};
use crate::linalg::{norm, rms};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RingConfig {
    pub n_bpm: usize,
    /// Magnet correctors per plane; the RF frequency is one more in x.
    pub n_corr: usize,
    pub n_quad: usize,
    pub n_sext: usize,
    pub n_bend: usize,
    pub superperiods: usize,
    /// Nominal RF frequency, Hz.
    pub f0: f64,
    pub alpha_c: f64,
    pub nu_x: f64,
    pub nu_y: f64,
    pub xi_x: f64,
    pub xi_y: f64,
    /// Beta function range of the synthetic lattice, m.
    pub beta_min: f64,
    pub beta_max: f64,
    /// Corrector position relative to its BPM, in units of BPM spacing.
    pub corrector_offset: f64,
    /// Mean horizontal dispersion, mm.
    pub eta_mean: f64,
    /// Gas scattering lifetime, hours. `inf` disables the term.
    pub tau_gas: f64,
    /// Touschek coefficient, mA h (lifetime = c / I). `inf` disables it.
    pub c_touschek: f64,
    pub initial_current: f64,
    /// Current readout noise, mA rms.
    pub current_noise_rms: f64,
    /// BPM noise, mm rms.
    pub bpm_noise_rms: f64,
    /// Static orbit error from random dipole errors, mrad rms per corrector.
    pub error_kick_rms: f64,
    /// Amplitude of the slow sinusoidal orbit drift, mm rms over BPMs.
    pub drift_amplitude: f64,
    pub drift_period: f64,
    /// Orbit random walk, mm rms per BPM per step.
    pub random_walk_rms: f64,
    /// Rate of relative circumference change, 1/s. Shows up as a
    /// dispersive orbit until the RF frequency follows it.
    pub circumference_drift_rate: f64,
    pub seed: u64,
    /// Simulation step, s.
    pub dt: f64,
    /// Simulated seconds per wall-clock second when free running.
    pub speedup: f64,
}

impl Default for RingConfig {
    fn default() -> Self {
        Self {
            n_bpm: 72,
            n_corr: 72,
            n_quad: 174,
            n_sext: 120,
            n_bend: 36,
            superperiods: 12,
            f0: 499.654e6,
            alpha_c: 6.0e-4,
            nu_x: 20.38,
            nu_y: 8.16,
            xi_x: 1.0,
            xi_y: 1.0,
            beta_min: 1.0,
            beta_max: 20.0,
            corrector_offset: 0.25,
            eta_mean: 150.0,
            tau_gas: 30.0,
            c_touschek: 1500.0,
            initial_current: 150.0,
            current_noise_rms: 0.0,
            bpm_noise_rms: 0.001,
            error_kick_rms: 0.02,
            drift_amplitude: 0.02,
            drift_period: 300.0,
            random_walk_rms: 0.0002,
            circumference_drift_rate: 0.0,
            seed: 1,
            dt: 2.0,
            speedup: 1.0,
        }
    }
}

impl RingConfig {
    /// A configuration with every stochastic or time-dependent orbit
    /// source switched off.
    pub fn noiseless() -> Self {
        Self {
            current_noise_rms: 0.0,
            bpm_noise_rms: 0.0,
            error_kick_rms: 0.0,
            drift_amplitude: 0.0,
            random_walk_rms: 0.0,
            circumference_drift_rate: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [self.n_bpm, self.n_corr, self.n_quad, self.n_sext, self.n_bend, self.superperiods];
        if counts.iter().any(|&n| n == 0) {
            return Err(Error::BadConfig("all element counts must be at least 1"));
        }
        if !(self.f0 > 0.0) || !self.f0.is_finite() {
            return Err(Error::BadConfig("f0 must be positive"));
        }
        if self.alpha_c == 0.0 || !self.alpha_c.is_finite() {
            return Err(Error::BadConfig("alpha_c must be non-zero"));
        }
        if !(self.beta_min > 0.0) || !(self.beta_max >= self.beta_min) {
            return Err(Error::BadConfig("need 0 < beta_min <= beta_max"));
        }
        if !(self.tau_gas > 0.0) || !(self.c_touschek > 0.0) {
            return Err(Error::BadConfig("lifetime parameters must be positive"));
        }
        if !(self.initial_current >= 0.0) {
            return Err(Error::BadConfig("initial current must be non-negative"));
        }
        let noise = [
            self.current_noise_rms,
            self.bpm_noise_rms,
            self.error_kick_rms,
            self.drift_amplitude,
            self.random_walk_rms,
        ];
        if noise.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::BadConfig("noise amplitudes must be finite and non-negative"));
        }
        if !(self.drift_period > 0.0) || !(self.dt > 0.0) || !(self.speedup > 0.0) {
            return Err(Error::BadConfig("drift_period, dt and speedup must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopUp {
    pub enabled: bool,
    pub threshold: f64,
    pub refill_to: f64,
}

impl TopUp {
    pub fn new(enabled: bool, threshold: f64, refill_to: f64) -> Result<Self> {
        if !(threshold < refill_to) || threshold < 0.0 {
            return Err(Error::BadThreshold { threshold, refill_to });
        }
        Ok(Self { enabled, threshold, refill_to })
    }
}

/// What the machine publishes after one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Readback {
    pub t: f64,
    /// Measured current (true current plus readout noise), mA.
    pub current: f64,
    pub bpm_x: Vec<f64>,
    pub bpm_y: Vec<f64>,
    pub tune_x: f64,
    pub tune_y: f64,
    pub chrom_x: f64,
    pub chrom_y: f64,
    /// Instantaneous lifetime of the loss model, hours.
    pub true_lifetime: f64,
    /// Current added by top-up during this step, mA.
    pub injected: f64,
}

/// Simulated storage ring. Owns the machine state; setpoints are applied by
/// the caller before each [`Ring::step`].
#[derive(Debug, Clone)]
pub struct Ring {
    cfg: RingConfig,
    response: ResponseModel,
    tunes: TuneModel,
    t0: f64,
    t: f64,
    current: f64,
    decay_origin: (f64, f64),
    kicks_x: Vec<f64>,
    kicks_y: Vec<f64>,
    quad: Vec<f64>,
    sext: Vec<f64>,
    bend: Vec<f64>,
    rf_delta_f: f64,
    error_orbit_x: Vec<f64>,
    error_orbit_y: Vec<f64>,
    drift_shape_x: Vec<f64>,
    drift_shape_y: Vec<f64>,
    walk_x: Vec<f64>,
    walk_y: Vec<f64>,
    top_up: TopUp,
    rng: ChaCha8Rng,
}

impl Ring {
    /// Builds the ring with simulated time starting at `t0`.
    pub fn new(cfg: RingConfig, t0: f64) -> Result<Self> {
        cfg.validate()?;
        let response = derive_response(&cfg)?;
        let lattice = Lattice::new(&cfg)?;
        let tunes = lattice.tune_model(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

        let (nb, nc) = (cfg.n_bpm, cfg.n_corr);
        let draw_orbit = |rng: &mut ChaCha8Rng, r: &crate::Matrix, amplitude: f64| -> Result<Vec<f64>> {
            let kicks: Vec<f64> = (0..nc).map(|_| gaussian(rng) * amplitude).collect();
            r.mul_vec(&kicks)
        };
        let error_orbit_x = draw_orbit(&mut rng, &response.r_x, cfg.error_kick_rms)?;
        let error_orbit_y = draw_orbit(&mut rng, &response.r_y, cfg.error_kick_rms)?;
        let mut unit_shape = |r: &crate::Matrix| -> Result<Vec<f64>> {
            let o = draw_orbit(&mut rng, r, 1.0)?;
            let s = rms(&o);
            Ok(o.iter().map(|x| if s > 0.0 { x / s } else { 0.0 }).collect())
        };
        let drift_shape_x = unit_shape(&response.r_x)?;
        let drift_shape_y = unit_shape(&response.r_y)?;

        Ok(Self {
            t0,
            t: t0,
            current: cfg.initial_current,
            decay_origin: (t0, cfg.initial_current),
            kicks_x: vec![0.0; nc],
            kicks_y: vec![0.0; nc],
            quad: tunes.i_quad_nom.clone(),
            sext: tunes.i_sext_nom.clone(),
            bend: tunes.i_bend_nom.clone(),
            rf_delta_f: 0.0,
            error_orbit_x,
            error_orbit_y,
            drift_shape_x,
            drift_shape_y,
            walk_x: vec![0.0; nb],
            walk_y: vec![0.0; nb],
            top_up: TopUp { enabled: false, threshold: 0.0, refill_to: 0.0 },
            rng,
            tunes,
            response,
            cfg,
        })
    }

    pub fn config(&self) -> &RingConfig {
        &self.cfg
    }

    pub fn response(&self) -> &ResponseModel {
        &self.response
    }

    pub fn tune_model(&self) -> &TuneModel {
        &self.tunes
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    pub fn rf_delta_f(&self) -> f64 {
        self.rf_delta_f
    }

    pub fn set_correctors_x(&mut self, kicks: &[f64]) -> Result<()> {
        copy_checked(&mut self.kicks_x, kicks)
    }

    pub fn set_correctors_y(&mut self, kicks: &[f64]) -> Result<()> {
        copy_checked(&mut self.kicks_y, kicks)
    }

    pub fn set_quadrupoles(&mut self, amps: &[f64]) -> Result<()> {
        copy_checked(&mut self.quad, amps)
    }

    pub fn set_sextupoles(&mut self, amps: &[f64]) -> Result<()> {
        copy_checked(&mut self.sext, amps)
    }

    pub fn set_bends(&mut self, amps: &[f64]) -> Result<()> {
        copy_checked(&mut self.bend, amps)
    }

    pub fn set_rf_delta_f(&mut self, hz: f64) -> Result<()> {
        if !hz.is_finite() {
            return Err(Error::BadValue("non-finite RF offset"));
        }
        self.rf_delta_f = hz;
        Ok(())
    }

    pub fn set_top_up(&mut self, enabled: bool, threshold: f64, refill_to: f64) -> Result<TopUp> {
        self.top_up = TopUp::new(enabled, threshold, refill_to)?;
        Ok(self.top_up)
    }

    pub fn top_up(&self) -> TopUp {
        self.top_up
    }

    /// Adds `delta` mA of beam at the current time.
    pub fn inject(&mut self, delta: f64) -> Result<f64> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::NegativeInjection(delta));
        }
        self.current += delta;
        self.decay_origin = (self.t, self.current);
        Ok(self.current)
    }

    fn loss_rates(&self) -> (f64, f64) {
        (1.0 / (self.cfg.tau_gas * 3600.0), 1.0 / (self.cfg.c_touschek * 3600.0))
    }

    /// Instantaneous lifetime of the loss model at the present current, h.
    pub fn true_lifetime(&self) -> f64 {
        1.0 / (1.0 / self.cfg.tau_gas + self.current / self.cfg.c_touschek)
    }

    /// Current after decaying from the last injection to time `t`: the exact
    /// solution of dI/dt = -a I - b I^2.
    fn decayed_current(&self, t: f64) -> f64 {
        let (a, b) = self.loss_rates();
        let (t_o, i_o) = self.decay_origin;
        let span = t - t_o;
        if a > 0.0 {
            let growth = -libm::expm1(-a * span) / a;
            i_o * libm::exp(-a * span) / (1.0 + b * i_o * growth)
        } else {
            i_o / (1.0 + b * i_o * span)
        }
    }

    /// Relative momentum deviation from the RF offset and the circumference
    /// drift.
    pub fn momentum_deviation(&self) -> f64 {
        let eps = self.cfg.circumference_drift_rate * (self.t - self.t0);
        -(self.rf_delta_f / self.cfg.f0 + eps) / self.cfg.alpha_c
    }

    /// Advances the machine by `dt` seconds and returns the new readbacks.
    pub fn step(&mut self, dt: f64) -> Result<Readback> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::BadValue("step must be positive"));
        }
        self.t += dt;
        self.current = self.decayed_current(self.t).max(0.0);
        let mut injected = 0.0;
        if self.top_up.enabled && self.current < self.top_up.threshold {
            injected = self.top_up.refill_to - self.current;
            self.current = self.top_up.refill_to;
            self.decay_origin = (self.t, self.current);
        }

        if self.cfg.random_walk_rms > 0.0 {
            let s = self.cfg.random_walk_rms;
            for w in self.walk_x.iter_mut().chain(self.walk_y.iter_mut()) {
                *w += gaussian(&mut self.rng) * s;
            }
        }
        let bpm_x = self.orbit_x();
        let bpm_y = self.orbit_y();
        let (bpm_x, bpm_y) = (self.add_noise(bpm_x), self.add_noise(bpm_y));
        let current = if self.cfg.current_noise_rms > 0.0 {
            self.current + gaussian(&mut self.rng) * self.cfg.current_noise_rms
        } else {
            self.current
        };

        let energy = self.tunes.energy_scale(&self.bend);
        let [tune_x, tune_y] = self.tunes.tunes(&self.quad, energy);
        let [chrom_x, chrom_y] = self.tunes.chromaticities(&self.sext, energy);
        Ok(Readback {
            t: self.t,
            current,
            bpm_x,
            bpm_y,
            tune_x,
            tune_y,
            chrom_x,
            chrom_y,
            true_lifetime: self.true_lifetime(),
            injected,
        })
    }

    fn drift_factor(&self) -> f64 {
        self.cfg.drift_amplitude * libm::sin(2.0 * PI * (self.t - self.t0) / self.cfg.drift_period)
    }

    /// Noise-free horizontal closed orbit, mm.
    pub fn orbit_x(&self) -> Vec<f64> {
        let mut x = self.response.r_x.mul_vec(&self.kicks_x).expect("shape checked on set");
        let delta = self.momentum_deviation();
        let drift = self.drift_factor();
        for i in 0..x.len() {
            x[i] += self.response.eta[i] * delta + self.error_orbit_x[i] + drift * self.drift_shape_x[i] + self.walk_x[i];
        }
        x
    }

    /// Noise-free vertical closed orbit, mm.
    pub fn orbit_y(&self) -> Vec<f64> {
        let mut y = self.response.r_y.mul_vec(&self.kicks_y).expect("shape checked on set");
        let drift = self.drift_factor();
        for i in 0..y.len() {
            y[i] += self.error_orbit_y[i] + drift * self.drift_shape_y[i] + self.walk_y[i];
        }
        y
    }

    fn add_noise(&mut self, mut v: Vec<f64>) -> Vec<f64> {
        let s = self.cfg.bpm_noise_rms;
        if s > 0.0 {
            for x in &mut v {
                *x += gaussian(&mut self.rng) * s;
            }
        }
        v
    }

    /// RMS of the static error orbit, mm. Handy for sizing tests.
    pub fn error_orbit_rms(&self) -> f64 {
        norm(&self.error_orbit_x) / libm::sqrt(self.error_orbit_x.len() as f64)
    }
}

fn copy_checked(dst: &mut [f64], src: &[f64]) -> Result<()> {
    if dst.len() != src.len() {
        return Err(Error::ShapeMismatch { expected: dst.len(), got: src.len() });
    }
    if src.iter().any(|x| !x.is_finite()) {
        return Err(Error::BadValue("non-finite setpoint"));
    }
    dst.copy_from_slice(src);
    Ok(())
}

/// Standard normal deviate (Box-Muller).
pub(crate) fn gaussian(rng: &mut impl RngCore) -> f64 {
    let u1 = ((rng.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
    let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * PI * u2)
}
