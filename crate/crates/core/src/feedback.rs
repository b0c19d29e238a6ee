//! SVD orbit correction with the RF frequency as an extra horizontal
//! corrector.
//!
//! [`SvdCorrector`] is the masked pseudo-inverse of a response matrix.
//! [`FeedbackLoop`] keeps the state of one plane of the slow orbit feedback:
//! the accumulated corrector kicks, the continuous frequency demand and the
//! frequency actually applied, which only moves in whole `f_step` units.
//! Whatever part of the frequency demand has not been applied yet is taken
//! up by the magnet correctors, so the orbit is fully corrected while the
//! kicks show a sawtooth between frequency steps.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{mean, norm, rms, Matrix};
use crate::svd::Svd;

/// Singular values below this fraction of the largest are never used.
pub const AUTO_CUTOFF: f64 = 1e-10;
pub const DEFAULT_F_STEP: f64 = 10.0;
/// Default weight of the frequency column, see [`FeedbackLoop::new`].
pub const DEFAULT_FREQ_WEIGHT: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct SvdCorrector {
    svd: Svd,
    /// Singular values padded with zeros to one per column.
    w: Vec<f64>,
    /// Right singular vectors, completed to a square basis (columns).
    v_full: Matrix,
    col_scale: Vec<f64>,
    mask: Vec<bool>,
    reference: Vec<f64>,
}

impl SvdCorrector {
    /// Factors `r_ext` (BPMs x correctors).
    pub fn new(r_ext: &Matrix) -> Result<Self> {
        Self::with_column_scale(r_ext, vec![1.0; r_ext.cols()])
    }

    /// Factors `r_ext * diag(scale)`. Corrections are reported back in the
    /// units of `r_ext`, so the scale only changes how the minimum-norm
    /// solution weighs the columns against each other.
    pub fn with_column_scale(r_ext: &Matrix, scale: Vec<f64>) -> Result<Self> {
        let (m, n) = r_ext.shape();
        if scale.len() != n {
            return Err(Error::ShapeMismatch { expected: n, got: scale.len() });
        }
        if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::BadValue("column scale must be positive"));
        }
        let scaled = Matrix::from_fn(m, n, |i, j| r_ext[(i, j)] * scale[j]);
        let svd = Svd::new(&scaled)?;
        let k = svd.s.len();
        let mut w = svd.s.clone();
        w.resize(n, 0.0);
        let v_full = if k == n {
            svd.v.clone()
        } else {
            let mut cols: Vec<Vec<f64>> = (0..k).map(|j| svd.v.column(j)).collect();
            cols.resize(n, vec![0.0; n]);
            let missing: Vec<usize> = (k..n).collect();
            crate::svd::complete_orthonormal(&mut cols, &missing);
            Matrix::from_columns(&cols)?
        };
        Ok(Self { svd, w, v_full, col_scale: scale, mask: vec![true; n], reference: vec![0.0; m] })
    }

    pub fn n_bpm(&self) -> usize {
        self.svd.u.rows()
    }

    pub fn n_correctors(&self) -> usize {
        self.w.len()
    }

    /// Singular values in descending order, one per corrector (zeros for
    /// the directions a wide matrix cannot reach).
    pub fn singular_values(&self) -> &[f64] {
        &self.w
    }

    pub fn u(&self) -> &Matrix {
        &self.svd.u
    }

    /// Right singular vectors as columns (square).
    pub fn v(&self) -> &Matrix {
        &self.v_full
    }

    pub fn svd(&self) -> &Svd {
        &self.svd
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn set_mask(&mut self, mask: &[bool]) -> Result<()> {
        if mask.len() != self.mask.len() {
            return Err(Error::BadMask { expected: self.mask.len(), got: mask.len() });
        }
        self.mask.copy_from_slice(mask);
        Ok(())
    }

    pub fn reference(&self) -> &[f64] {
        &self.reference
    }

    pub fn set_reference(&mut self, reference: &[f64]) -> Result<()> {
        if reference.len() != self.reference.len() {
            return Err(Error::ShapeMismatch { expected: self.reference.len(), got: reference.len() });
        }
        self.reference.copy_from_slice(reference);
        Ok(())
    }

    fn cutoff(&self) -> f64 {
        self.w.first().copied().unwrap_or(0.0) * AUTO_CUTOFF
    }

    /// Whether singular value `i` contributes (mask on and above cutoff).
    pub fn is_active(&self, i: usize) -> bool {
        self.mask[i] && self.w[i] > self.cutoff()
    }

    pub fn active_count(&self) -> usize {
        (0..self.w.len()).filter(|&i| self.is_active(i)).count()
    }

    /// `c = -D V diag(mask/w) Uᵀ (orbit - reference)`
    pub fn compute_correction(&self, orbit: &[f64]) -> Result<Vec<f64>> {
        if orbit.len() != self.n_bpm() {
            return Err(Error::ShapeMismatch { expected: self.n_bpm(), got: orbit.len() });
        }
        if self.active_count() == 0 {
            return Err(Error::AllDisabled);
        }
        let err: Vec<f64> = orbit.iter().zip(&self.reference).map(|(x, r)| x - r).collect();
        let k = self.svd.s.len();
        let mut c = self.svd.solve_masked(&err, self.cutoff(), |i| i < k && self.mask[i])?;
        for (ci, s) in c.iter_mut().zip(&self.col_scale) {
            *ci *= -s;
        }
        Ok(c)
    }

    /// The operator `orbit -> -correction` as an explicit matrix
    /// (correctors x BPMs).
    pub fn pseudo_inverse(&self) -> Matrix {
        let m = self.n_bpm();
        let n = self.n_correctors();
        let mut p = Matrix::zeros(n, m);
        let k = self.svd.s.len();
        for l in (0..k).filter(|&l| self.is_active(l)) {
            let inv = 1.0 / self.w[l];
            for i in 0..n {
                let vi = self.svd.v[(i, l)] * inv * self.col_scale[i];
                for j in 0..m {
                    p[(i, j)] += vi * self.svd.u[(j, l)];
                }
            }
        }
        p
    }
}

/// Moves `df_applied` to the multiple of `f_step` nearest to `df_target`,
/// rounding half away from zero. Targets closer than `f_step / 2` leave
/// the applied value unchanged.
pub fn quantize_frequency(df_target: f64, df_applied: f64, f_step: f64) -> f64 {
    if !(f_step > 0.0) || !df_target.is_finite() {
        return df_applied;
    }
    let base = libm::round(df_applied / f_step);
    let steps = libm::round((df_target - df_applied) / f_step);
    (base + steps) * f_step
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Stopped,
    Passive,
    Active,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Stopped => "STOPPED",
            Mode::Passive => "PASSIVE",
            Mode::Active => "ACTIVE",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s.trim().to_ascii_uppercase().as_str() {
            "STOPPED" | "STOP" | "0" => Some(Mode::Stopped),
            "PASSIVE" | "1" => Some(Mode::Passive),
            "ACTIVE" | "2" => Some(Mode::Active),
            _ => None,
        }
    }
}

/// Result of one feedback iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Iteration {
    /// Continuous correction (magnet kicks in mrad, then Δf in Hz if the
    /// plane has a frequency corrector), gain applied.
    pub correction: Vec<f64>,
    /// Accumulated magnet kicks after this iteration, mrad.
    pub kicks: Vec<f64>,
    /// Change of the magnet kicks to write to the setpoints, mrad.
    pub kick_delta: Vec<f64>,
    /// Frequency offset to apply, a multiple of `f_step`, Hz.
    pub df_applied: f64,
    /// Unquantized frequency demand, Hz.
    pub df_demand: f64,
    /// RMS of the measured orbit error the correction was computed from, mm.
    pub orbit_rms: f64,
    pub kick_rms: f64,
    pub kick_mean: f64,
}

/// State of one plane of the orbit feedback.
#[derive(Debug, Clone)]
pub struct FeedbackLoop {
    corrector: SvdCorrector,
    n_magnets: usize,
    /// Magnet kicks reproducing the orbit of 1 Hz RF change, mrad/Hz.
    compensation: Vec<f64>,
    has_freq: bool,
    /// Magnet part of the accumulated correction, without compensation.
    base_kicks: Vec<f64>,
    kicks: Vec<f64>,
    df_demand: f64,
    df_applied: f64,
    iterations: u64,
}

impl FeedbackLoop {
    /// Builds the loop for response `r` (BPMs x magnets) and, for the
    /// horizontal plane, the orbit response to the RF frequency (mm/Hz).
    ///
    /// The frequency column is scaled so that its share of a dispersive
    /// orbit in the minimum-norm solution is `w² / (1 + w²)` with
    /// `w = freq_weight`; the magnets take the rest.
    pub fn new(r: &Matrix, freq_column: Option<&[f64]>, freq_weight: f64) -> Result<Self> {
        let (m, n) = r.shape();
        let magnets = SvdCorrector::new(r)?;
        let (corrector, compensation) = match freq_column {
            Some(fc) => {
                if fc.len() != m {
                    return Err(Error::ShapeMismatch { expected: m, got: fc.len() });
                }
                // -(magnet correction of the frequency orbit) = R⁺ r_f
                let comp: Vec<f64> = magnets.compute_correction(fc)?.iter().map(|x| -x).collect();
                let comp_norm = norm(&comp);
                if !(freq_weight > 0.0) || comp_norm == 0.0 {
                    return Err(Error::BadValue("frequency weight and response must be non-zero"));
                }
                let mut scale = vec![1.0; n + 1];
                scale[n] = freq_weight / comp_norm;
                let ext = Matrix::from_fn(m, n + 1, |i, j| if j < n { r[(i, j)] } else { fc[i] });
                (SvdCorrector::with_column_scale(&ext, scale)?, comp)
            }
            None => (magnets, vec![0.0; n]),
        };
        Ok(Self {
            corrector,
            n_magnets: n,
            compensation,
            has_freq: freq_column.is_some(),
            base_kicks: vec![0.0; n],
            kicks: vec![0.0; n],
            df_demand: 0.0,
            df_applied: 0.0,
            iterations: 0,
        })
    }

    pub fn corrector(&self) -> &SvdCorrector {
        &self.corrector
    }

    pub fn corrector_mut(&mut self) -> &mut SvdCorrector {
        &mut self.corrector
    }

    pub fn n_magnets(&self) -> usize {
        self.n_magnets
    }

    pub fn has_frequency(&self) -> bool {
        self.has_freq
    }

    pub fn kicks(&self) -> &[f64] {
        &self.kicks
    }

    pub fn df_applied(&self) -> f64 {
        self.df_applied
    }

    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    /// Forgets accumulated kicks and frequency (after the operator resets
    /// the correctors).
    pub fn reset(&mut self) {
        self.base_kicks.iter_mut().for_each(|x| *x = 0.0);
        self.kicks.iter_mut().for_each(|x| *x = 0.0);
        self.df_demand = 0.0;
        self.df_applied = 0.0;
    }

    /// Computes one correction from `orbit`. With `commit` the loop state
    /// advances (active mode); without it the result is what would have
    /// been applied (passive mode).
    pub fn iterate(&mut self, orbit: &[f64], gain: f64, f_step: f64, commit: bool) -> Result<Iteration> {
        let mut correction = self.corrector.compute_correction(orbit)?;
        correction.iter_mut().for_each(|c| *c *= gain);
        let err_rms = rms(&orbit.iter().zip(self.corrector.reference()).map(|(x, r)| x - r).collect::<Vec<_>>());

        let n = self.n_magnets;
        let base: Vec<f64> = self.base_kicks.iter().zip(&correction[..n]).map(|(k, c)| k + c).collect();
        let (df_demand, df_applied) = if self.has_freq {
            let demand = self.df_demand + correction[n];
            (demand, quantize_frequency(demand, self.df_applied, f_step))
        } else {
            (0.0, 0.0)
        };
        let pending = df_demand - df_applied;
        let kicks: Vec<f64> = base.iter().zip(&self.compensation).map(|(b, u)| b + u * pending).collect();
        let kick_delta = kicks.iter().zip(&self.kicks).map(|(a, b)| a - b).collect();

        let out = Iteration {
            kick_rms: rms(&kicks),
            kick_mean: mean(&kicks),
            correction,
            kick_delta,
            df_applied,
            df_demand,
            orbit_rms: err_rms,
            kicks: kicks.clone(),
        };
        if commit {
            self.base_kicks = base;
            self.kicks = kicks;
            self.df_demand = df_demand;
            self.df_applied = df_applied;
        }
        self.iterations += 1;
        Ok(out)
    }
}
