//! Beam lifetime from a window of current samples.
//!
//! Four estimators with different robustness/accuracy trade-offs:
//!
//! * [`lt_twopoint`]: secant between the first and last sample.
//! * [`lt_logfit`]: least-squares line through `ln I(t)`.
//! * [`lt_expfit`]: Gauss-Newton fit of `I0 exp(-t/tau)` seeded by the log fit.
//! * [`lt_medfilt`]: median of the instantaneous lifetimes of adjacent pairs.
//!
//! All of them take `(t [s], I [mA])` samples and report tau in hours. Times
//! are centered before fitting so epoch-sized timestamps do not cost
//! precision.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 30;
/// A positive current jump larger than this many rms steps is an injection.
pub const INJECTION_THRESHOLD: f64 = 5.0;

const EXPFIT_MAX_ITER: usize = 25;
const EXPFIT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    TwoPoint,
    LogFit,
    ExpFit,
    MedFilt,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::TwoPoint, Algorithm::LogFit, Algorithm::ExpFit, Algorithm::MedFilt];

    /// Suffix used in channel names (`LIFETIME:<suffix>`).
    pub fn suffix(self) -> &'static str {
        match self {
            Algorithm::TwoPoint => "TWOPOINT",
            Algorithm::LogFit => "LOGFIT",
            Algorithm::ExpFit => "EXPFIT",
            Algorithm::MedFilt => "MEDFILT",
        }
    }

    pub fn evaluate(self, samples: &[(f64, f64)]) -> Result<LifetimeResult> {
        match self {
            Algorithm::TwoPoint => lt_twopoint(samples),
            Algorithm::LogFit => lt_logfit(samples),
            Algorithm::ExpFit => lt_expfit(samples),
            Algorithm::MedFilt => lt_medfilt(samples),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LifetimeResult {
    /// Lifetime in hours; `0.0` when not valid.
    pub tau: f64,
    pub valid: bool,
    pub algorithm: Algorithm,
}

impl LifetimeResult {
    fn from_seconds(tau_s: f64, algorithm: Algorithm) -> Self {
        if tau_s > 0.0 && tau_s.is_finite() {
            Self { tau: tau_s / 3600.0, valid: true, algorithm }
        } else {
            Self::invalid(algorithm)
        }
    }

    fn invalid(algorithm: Algorithm) -> Self {
        Self { tau: 0.0, valid: false, algorithm }
    }
}

fn need(samples: &[(f64, f64)], n: usize) -> Result<()> {
    if samples.len() < n {
        Err(Error::InsufficientData { needed: n, have: samples.len() })
    } else {
        Ok(())
    }
}

pub fn lt_twopoint(samples: &[(f64, f64)]) -> Result<LifetimeResult> {
    need(samples, 2)?;
    let (t0, i0) = samples[0];
    let (t1, i1) = samples[samples.len() - 1];
    if i1 >= i0 || i1 <= 0.0 {
        return Ok(LifetimeResult::invalid(Algorithm::TwoPoint));
    }
    Ok(LifetimeResult::from_seconds(-i1 * (t1 - t0) / (i1 - i0), Algorithm::TwoPoint))
}

/// Slope and centered intercept of the least-squares line `y = a + b (t - t_mean)`.
fn line_fit(t: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    let n = t.len() as f64;
    let t_mean = t.iter().sum::<f64>() / n;
    let y_mean = y.iter().sum::<f64>() / n;
    let (mut stt, mut sty) = (0.0, 0.0);
    for (ti, yi) in t.iter().zip(y) {
        let dt = ti - t_mean;
        stt += dt * dt;
        sty += dt * (yi - y_mean);
    }
    if stt == 0.0 {
        return Err(Error::SingularFit);
    }
    Ok((sty / stt, y_mean, t_mean))
}

pub fn lt_logfit(samples: &[(f64, f64)]) -> Result<LifetimeResult> {
    need(samples, 3)?;
    if samples.iter().any(|&(_, i)| !(i > 0.0)) {
        return Err(Error::NonPositiveCurrent);
    }
    let t: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let y: Vec<f64> = samples.iter().map(|s| libm::log(s.1)).collect();
    let (slope, _, _) = line_fit(&t, &y)?;
    if slope >= 0.0 {
        return Ok(LifetimeResult::invalid(Algorithm::LogFit));
    }
    Ok(LifetimeResult::from_seconds(-1.0 / slope, Algorithm::LogFit))
}

pub fn lt_expfit(samples: &[(f64, f64)]) -> Result<LifetimeResult> {
    need(samples, 3)?;
    let invalid = LifetimeResult::invalid(Algorithm::ExpFit);
    if samples.iter().any(|&(_, i)| !(i > 0.0)) {
        // no log-fit seed available
        return Ok(invalid);
    }
    let t: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let y: Vec<f64> = samples.iter().map(|s| libm::log(s.1)).collect();
    let (slope, y_mean, t_mean) = line_fit(&t, &y)?;
    if slope >= 0.0 {
        return Ok(invalid);
    }
    // model I = a exp(-k (t - t_mean)), parameters (a, k)
    let mut a = libm::exp(y_mean);
    let mut k = -slope;
    for _ in 0..EXPFIT_MAX_ITER {
        let (mut jaa, mut jak, mut jkk, mut ga, mut gk) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(ti, ii) in samples {
            let tc = ti - t_mean;
            let e = libm::exp(-k * tc);
            let da = e;
            let dk = -a * tc * e;
            let r = ii - a * e;
            jaa += da * da;
            jak += da * dk;
            jkk += dk * dk;
            ga += da * r;
            gk += dk * r;
        }
        let det = jaa * jkk - jak * jak;
        if !(det > 0.0) || !det.is_finite() {
            return Ok(invalid);
        }
        let step_a = (ga * jkk - jak * gk) / det;
        let step_k = (jaa * gk - jak * ga) / det;
        a += step_a;
        k += step_k;
        if !(k > 0.0) || !k.is_finite() {
            return Ok(invalid);
        }
        // |d tau| / tau == |d k| / k to first order
        if libm::fabs(step_k) < EXPFIT_TOL * k {
            return Ok(LifetimeResult::from_seconds(1.0 / k, Algorithm::ExpFit));
        }
    }
    Ok(invalid)
}

pub fn lt_medfilt(samples: &[(f64, f64)]) -> Result<LifetimeResult> {
    need(samples, 5)?;
    let mut taus: Vec<f64> = samples
        .windows(2)
        .map(|w| {
            let (t0, i0) = w[0];
            let (t1, i1) = w[1];
            let di = i1 - i0;
            if di == 0.0 {
                f64::INFINITY
            } else {
                -0.5 * (i0 + i1) * (t1 - t0) / di
            }
        })
        .collect();
    taus.sort_by(f64::total_cmp);
    let n = taus.len();
    let median = if n % 2 == 1 { taus[n / 2] } else { 0.5 * (taus[n / 2 - 1] + taus[n / 2]) };
    Ok(LifetimeResult::from_seconds(median, Algorithm::MedFilt))
}

/// Bounded window of `(t, I)` samples.
#[derive(Debug, Clone)]
pub struct SampleWindow {
    capacity: usize,
    samples: VecDeque<(f64, f64)>,
}

impl Default for SampleWindow {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

impl SampleWindow {
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(2);
        Self { capacity, samples: VecDeque::with_capacity(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn set_capacity(&mut self, capacity: usize) {
        self.capacity = capacity.max(2);
        while self.samples.len() > self.capacity {
            self.samples.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    pub fn last(&self) -> Option<(f64, f64)> {
        self.samples.back().copied()
    }

    pub fn push(&mut self, t: f64, current: f64) -> Result<()> {
        if let Some((last_t, _)) = self.last() {
            if !(t > last_t) {
                return Err(Error::NonMonotonicTime);
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back((t, current));
        Ok(())
    }

    pub fn to_vec(&self) -> Vec<(f64, f64)> {
        self.samples.iter().copied().collect()
    }

    /// RMS of the current steps between adjacent samples.
    pub fn rms_step(&self) -> f64 {
        let n = self.samples.len();
        if n < 2 {
            return 0.0;
        }
        let ss: f64 = self
            .samples
            .iter()
            .zip(self.samples.iter().skip(1))
            .map(|(a, b)| (b.1 - a.1) * (b.1 - a.1))
            .sum();
        libm::sqrt(ss / (n - 1) as f64)
    }

    /// Whether `current` would be a jump upwards large enough to be an
    /// injection.
    pub fn is_injection(&self, current: f64) -> bool {
        match self.last() {
            Some((_, last)) => {
                let jump = current - last;
                jump > 0.0 && jump > INJECTION_THRESHOLD * self.rms_step()
            }
            None => false,
        }
    }

    /// Adds a sample, first clearing the window if the sample follows an
    /// injection. Returns `true` when the window was cleared.
    pub fn push_detecting_injection(&mut self, t: f64, current: f64) -> Result<bool> {
        if let Some((last_t, _)) = self.last() {
            if !(t > last_t) {
                return Err(Error::NonMonotonicTime);
            }
        }
        let cleared = self.is_injection(current);
        if cleared {
            self.clear();
        }
        self.push(t, current)?;
        Ok(cleared)
    }

    pub fn evaluate(&self, algorithm: Algorithm) -> Result<LifetimeResult> {
        let v = self.to_vec();
        algorithm.evaluate(&v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn exponential(tau_h: f64, dt: f64, n: usize, t0: f64, i0: f64) -> Vec<(f64, f64)> {
        (0..n)
            .map(|k| {
                let t = k as f64 * dt;
                (t0 + t, i0 * libm::exp(-t / (tau_h * 3600.0)))
            })
            .collect()
    }

    #[test]
    fn twopoint_hand_evaluated() {
        let e = core::f64::consts::E;
        let r = lt_twopoint(&[(0.0, 100.0), (7200.0, 100.0 / e)]).unwrap();
        // (100/e) * 2 h / (100 - 100/e) = 2 / (e - 1) h
        let expected = 2.0 / (e - 1.0);
        assert!(r.valid);
        assert!((r.tau - expected).abs() < 1e-12, "{}", r.tau);
        assert!((r.tau - 1.164).abs() < 1e-3);
    }

    #[test]
    fn twopoint_edge_cases() {
        assert!(!lt_twopoint(&[(0.0, 5.0), (2.0, 5.0), (4.0, 5.0)]).unwrap().valid);
        assert!(!lt_twopoint(&[(0.0, 5.0), (2.0, 0.0)]).unwrap().valid);
        assert_eq!(lt_twopoint(&[(0.0, 5.0)]), Err(Error::InsufficientData { needed: 2, have: 1 }));
    }

    #[test]
    fn logfit_exact_and_errors() {
        let s = exponential(10.0, 2.0, 30, 0.0, 100.0);
        let r = lt_logfit(&s).unwrap();
        assert!((r.tau - 10.0).abs() < 1e-9 * 10.0);
        let rising: Vec<_> = s.iter().rev().enumerate().map(|(k, &(_, i))| (k as f64, i)).collect();
        assert!(!lt_logfit(&rising).unwrap().valid);
        let mut with_zero = s.clone();
        with_zero[4].1 = 0.0;
        assert_eq!(lt_logfit(&with_zero), Err(Error::NonPositiveCurrent));
        assert!(matches!(lt_logfit(&s[..2]), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn expfit_exact_and_flat() {
        let s = exponential(10.0, 2.0, 30, 1.7e9, 100.0);
        let r = lt_expfit(&s).unwrap();
        assert!(r.valid);
        assert!((r.tau - 10.0).abs() < 1e-9 * 10.0, "{}", r.tau);
        let flat: Vec<_> = (0..10).map(|k| (k as f64, 42.0)).collect();
        assert!(!lt_expfit(&flat).unwrap().valid);
    }

    #[test]
    fn medfilt_exact_and_spike() {
        let s = exponential(10.0, 2.0, 30, 0.0, 100.0);
        let clean = lt_medfilt(&s).unwrap();
        assert!((clean.tau - 10.0).abs() < 1e-3 * 10.0);
        let mut spiked = s.clone();
        for sample in spiked.iter_mut().skip(15) {
            sample.1 += 0.2;
        }
        let r = lt_medfilt(&spiked).unwrap();
        assert!((r.tau - clean.tau).abs() < 0.01 * clean.tau);
        assert_eq!(lt_medfilt(&s[..4]), Err(Error::InsufficientData { needed: 5, have: 4 }));
    }

    #[test]
    fn window_detects_injection() {
        let mut w = SampleWindow::new(30);
        for (t, i) in exponential(10.0, 2.0, 10, 0.0, 100.0) {
            assert!(!w.push_detecting_injection(t, i).unwrap());
        }
        assert!(w.push_detecting_injection(20.0, 100.3).unwrap());
        assert_eq!(w.len(), 1);
        assert_eq!(w.push(20.0, 1.0), Err(Error::NonMonotonicTime));
    }

    #[test]
    fn window_capacity() {
        let mut w = SampleWindow::new(3);
        for k in 0..5 {
            w.push(k as f64, 10.0 - k as f64).unwrap();
        }
        assert_eq!(w.to_vec(), vec![(2.0, 8.0), (3.0, 7.0), (4.0, 6.0)]);
        w.set_capacity(2);
        assert_eq!(w.to_vec(), vec![(3.0, 7.0), (4.0, 6.0)]);
    }
}
