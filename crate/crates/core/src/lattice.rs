//! Synthetic storage-ring lattice and the linear maps derived from it.
//!
//! The lattice is not a real machine: beta functions follow a smooth
//! periodic pattern, betatron phase advances uniformly, and dispersion is a
//! positive periodic bump. That is enough to build a full-rank,
//! physically shaped orbit response matrix with the usual closed-orbit
//! formula
//!
//! ```text
//! R_ij = sqrt(beta_i beta_j) cos(pi nu - |phi_i - phi_j|) / (2 sin(pi nu))
//! ```
//!
//! The simulator and the orbit feedback both take their matrices from here,
//! so the feedback's model of the machine is exact unless a test perturbs
//! it on purpose.

use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{solve2, Matrix};
use crate::ring::RingConfig;

/// Optical functions of one transverse plane sampled at BPMs and correctors.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaneOptics {
    pub tune: f64,
    pub beta_bpm: Vec<f64>,
    pub phase_bpm: Vec<f64>,
    pub beta_cor: Vec<f64>,
    pub phase_cor: Vec<f64>,
}

impl PlaneOptics {
    /// Orbit response in mm/mrad (beta in m).
    pub fn response(&self) -> Result<Matrix> {
        let s = libm::sin(PI * self.tune);
        if libm::fabs(s) < 1e-6 {
            return Err(Error::DegenerateTune(self.tune));
        }
        let pn = PI * self.tune;
        Ok(Matrix::from_fn(self.beta_bpm.len(), self.beta_cor.len(), |i, j| {
            let dphi = libm::fabs(self.phase_bpm[i] - self.phase_cor[j]);
            libm::sqrt(self.beta_bpm[i] * self.beta_cor[j]) * libm::cos(pn - dphi) / (2.0 * s)
        }))
    }
}

/// Everything the feedback needs to know about the machine's linear orbit
/// response.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseModel {
    /// Horizontal response, BPM x corrector, mm/mrad.
    pub r_x: Matrix,
    /// Vertical response, BPM x corrector, mm/mrad.
    pub r_y: Matrix,
    /// Horizontal dispersion at the BPMs in mm per unit relative momentum
    /// deviation.
    pub eta: Vec<f64>,
    pub alpha_c: f64,
    /// Nominal RF frequency, Hz.
    pub f0: f64,
}

impl ResponseModel {
    /// Horizontal orbit change per Hz of RF frequency change (mm/Hz).
    pub fn freq_column(&self) -> Vec<f64> {
        let k = -1.0 / (self.alpha_c * self.f0);
        self.eta.iter().map(|e| e * k).collect()
    }

    /// Horizontal response extended by the RF frequency as one more
    /// corrector (last column, mm/Hz).
    pub fn r_ext_x(&self) -> Matrix {
        let (m, n) = self.r_x.shape();
        let fc = self.freq_column();
        Matrix::from_fn(m, n + 1, |i, j| if j < n { self.r_x[(i, j)] } else { fc[i] })
    }

    pub fn validate(&self) -> Result<()> {
        if self.eta.len() != self.r_x.rows() {
            return Err(Error::ShapeMismatch { expected: self.r_x.rows(), got: self.eta.len() });
        }
        if self.r_y.rows() != self.r_x.rows() {
            return Err(Error::ShapeMismatch { expected: self.r_x.rows(), got: self.r_y.rows() });
        }
        if !(self.f0 > 0.0) || self.alpha_c == 0.0 || !self.alpha_c.is_finite() {
            return Err(Error::BadConfig("f0 must be positive and alpha_c non-zero"));
        }
        Ok(())
    }
}

/// Linear tune and chromaticity response to quadrupole and sextupole
/// currents, with the nominal currents they are referenced to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneModel {
    /// Tune shift per ampere, row 0 horizontal, row 1 vertical.
    pub g_tune: Vec<[f64; 2]>,
    /// Chromaticity shift per ampere.
    pub g_chrom: Vec<[f64; 2]>,
    pub i_quad_nom: Vec<f64>,
    pub i_sext_nom: Vec<f64>,
    pub i_bend_nom: Vec<f64>,
    pub nu_nom: [f64; 2],
    pub xi_nom: [f64; 2],
}

impl TuneModel {
    /// Relative energy implied by the bend currents (ratio of means).
    pub fn energy_scale(&self, i_bend: &[f64]) -> f64 {
        let nom: f64 = self.i_bend_nom.iter().sum();
        let act: f64 = i_bend.iter().sum();
        if nom == 0.0 || i_bend.len() != self.i_bend_nom.len() {
            return 1.0;
        }
        act / nom
    }

    /// Tunes for the given quadrupole currents at energy scale `energy`.
    /// Magnet strengths are normalized by the beam rigidity, so scaling all
    /// families together leaves the optics unchanged.
    pub fn tunes(&self, i_quad: &[f64], energy: f64) -> [f64; 2] {
        apply_map(&self.g_tune, i_quad, &self.i_quad_nom, energy, self.nu_nom)
    }

    pub fn chromaticities(&self, i_sext: &[f64], energy: f64) -> [f64; 2] {
        apply_map(&self.g_chrom, i_sext, &self.i_sext_nom, energy, self.xi_nom)
    }

    /// Minimum-norm right inverse `Gᵀ (G Gᵀ)⁻¹` of a 2-row map, returned as
    /// two columns.
    pub fn right_inverse(g: &[[f64; 2]]) -> Result<[Vec<f64>; 2]> {
        let mut ggt = [[0.0; 2]; 2];
        for row in g {
            for a in 0..2 {
                for b in 0..2 {
                    ggt[a][b] += row[a] * row[b];
                }
            }
        }
        let c0 = solve2(ggt, [1.0, 0.0]).ok_or(Error::RankDeficient("tune/chromaticity response"))?;
        let c1 = solve2(ggt, [0.0, 1.0]).ok_or(Error::RankDeficient("tune/chromaticity response"))?;
        let col = |c: [f64; 2]| g.iter().map(|r| r[0] * c[0] + r[1] * c[1]).collect();
        Ok([col(c0), col(c1)])
    }
}

fn apply_map(g: &[[f64; 2]], current: &[f64], nominal: &[f64], energy: f64, base: [f64; 2]) -> [f64; 2] {
    let mut out = base;
    for ((row, i), i0) in g.iter().zip(current).zip(nominal) {
        let d = i / energy - i0;
        out[0] += row[0] * d;
        out[1] += row[1] * d;
    }
    out
}

/// The synthetic lattice for a ring configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub x: PlaneOptics,
    pub y: PlaneOptics,
    /// Dispersion at the BPMs, mm.
    pub eta: Vec<f64>,
    superperiods: f64,
    beta_min: f64,
    beta_max: f64,
    eta_mean: f64,
}

impl Lattice {
    pub fn new(cfg: &RingConfig) -> Result<Self> {
        cfg.validate()?;
        let bpm_pos: Vec<f64> = (0..cfg.n_bpm).map(|i| i as f64 / cfg.n_bpm as f64).collect();
        let cor_pos: Vec<f64> =
            (0..cfg.n_corr).map(|j| (j as f64 + cfg.corrector_offset) / cfg.n_corr as f64).collect();
        let mut lat = Self {
            x: PlaneOptics { tune: cfg.nu_x, beta_bpm: Vec::new(), phase_bpm: Vec::new(), beta_cor: Vec::new(), phase_cor: Vec::new() },
            y: PlaneOptics { tune: cfg.nu_y, beta_bpm: Vec::new(), phase_bpm: Vec::new(), beta_cor: Vec::new(), phase_cor: Vec::new() },
            eta: Vec::new(),
            superperiods: cfg.superperiods as f64,
            beta_min: cfg.beta_min,
            beta_max: cfg.beta_max,
            eta_mean: cfg.eta_mean,
        };
        for (plane, shift) in [(0usize, 0.0), (1, PI)] {
            let tune = if plane == 0 { cfg.nu_x } else { cfg.nu_y };
            let optics = PlaneOptics {
                tune,
                beta_bpm: bpm_pos.iter().map(|&s| lat.beta(s, shift)).collect(),
                phase_bpm: bpm_pos.iter().map(|&s| 2.0 * PI * tune * s).collect(),
                beta_cor: cor_pos.iter().map(|&s| lat.beta(s, shift)).collect(),
                phase_cor: cor_pos.iter().map(|&s| 2.0 * PI * tune * s).collect(),
            };
            if plane == 0 {
                lat.x = optics;
            } else {
                lat.y = optics;
            }
        }
        lat.eta = bpm_pos.iter().map(|&s| lat.dispersion(s)).collect();
        Ok(lat)
    }

    /// Beta function at ring position `s` in [0, 1).
    fn beta(&self, s: f64, shift: f64) -> f64 {
        let c = libm::cos(2.0 * PI * self.superperiods * s + shift);
        self.beta_min + (self.beta_max - self.beta_min) * (0.5 + 0.5 * c)
    }

    fn dispersion(&self, s: f64) -> f64 {
        self.eta_mean * (1.0 + 0.5 * libm::cos(2.0 * PI * self.superperiods * s))
    }

    /// Linear tune/chromaticity model. Quadrupoles alternate focusing and
    /// defocusing; a focusing quad raises the horizontal tune and lowers the
    /// vertical one in proportion to the local beta functions.
    pub fn tune_model(&self, cfg: &RingConfig) -> TuneModel {
        const QUAD_K_PER_AMP: f64 = 1e-3; // integrated gradient, 1/m per A
        const SEXT_K_PER_AMP: f64 = 2e-2; // integrated strength, 1/m^2 per A
        let four_pi = 4.0 * PI;

        let g_tune = (0..cfg.n_quad)
            .map(|q| {
                let s = (q as f64 + 0.25) / cfg.n_quad as f64;
                let sign = if q % 2 == 0 { 1.0 } else { -1.0 };
                [
                    sign * self.beta(s, 0.0) * QUAD_K_PER_AMP / four_pi,
                    -sign * self.beta(s, PI) * QUAD_K_PER_AMP / four_pi,
                ]
            })
            .collect();
        let g_chrom = (0..cfg.n_sext)
            .map(|k| {
                let s = (k as f64 + 0.75) / cfg.n_sext as f64;
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                let eta_m = self.dispersion(s) * 1e-3;
                [
                    sign * self.beta(s, 0.0) * eta_m * SEXT_K_PER_AMP / four_pi,
                    -sign * self.beta(s, PI) * eta_m * SEXT_K_PER_AMP / four_pi,
                ]
            })
            .collect();
        let smooth = |k: usize, n: usize, lo: f64, hi: f64| {
            let s = k as f64 / n as f64;
            lo + (hi - lo) * (0.5 + 0.5 * libm::sin(2.0 * PI * 3.0 * s + 0.3))
        };
        TuneModel {
            g_tune,
            g_chrom,
            i_quad_nom: (0..cfg.n_quad).map(|q| smooth(q, cfg.n_quad, 80.0, 160.0)).collect(),
            i_sext_nom: (0..cfg.n_sext).map(|k| smooth(k, cfg.n_sext, 40.0, 120.0)).collect(),
            i_bend_nom: (0..cfg.n_bend).map(|_| 480.0).collect(),
            nu_nom: [cfg.nu_x, cfg.nu_y],
            xi_nom: [cfg.xi_x, cfg.xi_y],
        }
    }
}

/// Builds the response model used by both the simulator and the feedback.
pub fn derive_response(cfg: &RingConfig) -> Result<ResponseModel> {
    let lat = Lattice::new(cfg)?;
    Ok(ResponseModel {
        r_x: lat.x.response()?,
        r_y: lat.y.response()?,
        eta: lat.eta.clone(),
        alpha_c: cfg.alpha_c,
        f0: cfg.f0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svd::Svd;

    #[test]
    fn integer_tune_is_degenerate() {
        let cfg = RingConfig { nu_x: 20.0, ..RingConfig::default() };
        assert!(matches!(derive_response(&cfg), Err(Error::DegenerateTune(_))));
        let cfg = RingConfig { nu_y: 8.0, ..RingConfig::default() };
        assert!(matches!(derive_response(&cfg), Err(Error::DegenerateTune(_))));
    }

    #[test]
    fn colocated_uniform_lattice_is_symmetric() {
        let cfg = RingConfig { beta_min: 7.0, beta_max: 7.0, corrector_offset: 0.0, ..RingConfig::default() };
        let model = derive_response(&cfg).unwrap();
        let r = &model.r_x;
        assert_eq!(r.shape(), (72, 72));
        assert!(r.max_abs_diff(&r.transpose()) < 1e-12);
    }

    #[test]
    fn corrector_midway_between_bpms_loses_a_mode() {
        // the even Green function cancels the alternating harmonic exactly
        let cfg = RingConfig { corrector_offset: 0.5, ..RingConfig::default() };
        let svd = Svd::new(&derive_response(&cfg).unwrap().r_x).unwrap();
        assert!(svd.s[71] < 1e-12 * svd.s[0]);
    }

    #[test]
    fn default_response_is_full_rank_with_positive_dispersion() {
        let model = derive_response(&RingConfig::default()).unwrap();
        assert!(model.eta.iter().all(|&e| e > 0.0));
        let ext = model.r_ext_x();
        assert_eq!(ext.shape(), (72, 73));
        let svd = Svd::new(&ext).unwrap();
        assert!(svd.s[71] > 1e-6 * svd.s[0], "condition too large: {:?}", (svd.s[0], svd.s[71]));
        // the magnets alone must reach every orbit, dispersion included
        for (plane, r) in [("x", &model.r_x), ("y", &model.r_y)] {
            let svd = Svd::new(r).unwrap();
            assert!(svd.s[71] > 1e-6 * svd.s[0], "{plane} condition too large: {:?}", (svd.s[0], svd.s[71]));
        }
        let fc = model.freq_column();
        for i in 0..72 {
            assert_eq!(ext[(i, 72)], fc[i]);
        }
    }

    #[test]
    fn tune_map_has_rank_two_and_right_inverse() {
        let cfg = RingConfig::default();
        let lat = Lattice::new(&cfg).unwrap();
        let tm = lat.tune_model(&cfg);
        for g in [&tm.g_tune, &tm.g_chrom] {
            let [c0, c1] = TuneModel::right_inverse(g).unwrap();
            let gm = |c: &[f64], k: usize| g.iter().zip(c).map(|(r, x)| r[k] * x).sum::<f64>();
            assert!((gm(&c0, 0) - 1.0).abs() < 1e-12 && gm(&c0, 1).abs() < 1e-12);
            assert!(gm(&c1, 0).abs() < 1e-12 && (gm(&c1, 1) - 1.0).abs() < 1e-12);
        }
        assert_eq!(tm.tunes(&tm.i_quad_nom, 1.0), tm.nu_nom);
        let doubled: Vec<f64> = tm.i_quad_nom.iter().map(|x| 2.0 * x).collect();
        let t = tm.tunes(&doubled, 2.0);
        assert!((t[0] - tm.nu_nom[0]).abs() < 1e-12);
    }
}
