//! Magnet optics reduced to six physical parameters.
//!
//! An [`OpticsSetup`] carries the nominal currents of one optics and the
//! matrices converting tune and chromaticity shifts into current changes.
//! Together with [`AdjustmentParams`] it fully determines every quadrupole,
//! sextupole and bend current, and [`infer_params`] goes the other way.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::TuneModel;
use crate::linalg::{dot, norm, solve2, Matrix};
use crate::svd::Svd;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentParams {
    pub d_nu_x: f64,
    pub d_nu_y: f64,
    pub d_xi_x: f64,
    pub d_xi_y: f64,
    pub s_sext: f64,
    pub s_energy: f64,
}

impl Default for AdjustmentParams {
    fn default() -> Self {
        Self { d_nu_x: 0.0, d_nu_y: 0.0, d_xi_x: 0.0, d_xi_y: 0.0, s_sext: 1.0, s_energy: 1.0 }
    }
}

impl AdjustmentParams {
    /// Parameter names in publication order, as used for channel suffixes.
    pub const NAMES: [&'static str; 6] = ["D-NU-X", "D-NU-Y", "D-XI-X", "D-XI-Y", "S-SEXT", "S-ENERGY"];

    pub fn to_array(&self) -> [f64; 6] {
        [self.d_nu_x, self.d_nu_y, self.d_xi_x, self.d_xi_y, self.s_sext, self.s_energy]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self { d_nu_x: a[0], d_nu_y: a[1], d_xi_x: a[2], d_xi_y: a[3], s_sext: a[4], s_energy: a[5] }
    }

    /// Sets one parameter by its channel suffix (`D-NU-X`, ...) or field
    /// name (`d_nu_x`, ...).
    pub fn set_by_name(&mut self, name: &str, value: f64) -> Result<()> {
        let mut a = self.to_array();
        let idx = Self::NAMES
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name) || n.replace('-', "_").eq_ignore_ascii_case(name))
            .ok_or(Error::BadParams("unknown parameter name"))?;
        a[idx] = value;
        *self = Self::from_array(a);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().any(|x| !x.is_finite()) {
            return Err(Error::BadParams("non-finite parameter"));
        }
        if !(self.s_energy > 0.0) {
            return Err(Error::BadParams("energy scale must be positive"));
        }
        if !(self.s_sext >= 0.0) {
            return Err(Error::BadParams("sextupole scale must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpticsSetup {
    pub name: String,
    pub i_quad_nom: Vec<f64>,
    pub i_sext_nom: Vec<f64>,
    pub i_bend_nom: Vec<f64>,
    /// Quadrupole current change per unit tune shift, columns (x, y).
    pub m_tune: [Vec<f64>; 2],
    /// Sextupole current change per unit chromaticity shift, columns (x, y).
    pub m_chrom: [Vec<f64>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagnetCurrents {
    pub quad: Vec<f64>,
    pub sext: Vec<f64>,
    pub bend: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub params: AdjustmentParams,
    /// Norm of the quadrupole currents not explained by the parameters, A
    /// (after removing the energy scale).
    pub residual_quad: f64,
    pub residual_sext: f64,
}

fn rank2(cols: &[Vec<f64>; 2], what: &'static str) -> Result<()> {
    let (a, b) = (&cols[0], &cols[1]);
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::RankDeficient(what));
    }
    let cos = dot(a, b) / (na * nb);
    if 1.0 - libm::fabs(cos) < 1e-12 {
        return Err(Error::RankDeficient(what));
    }
    Ok(())
}

impl OpticsSetup {
    /// Derives an optics from a tune model: nominal currents are the model's
    /// and the adjustment matrices are minimum-norm right inverses of its
    /// tune and chromaticity maps.
    pub fn generate(name: &str, model: &TuneModel) -> Result<Self> {
        let setup = Self {
            name: name.into(),
            i_quad_nom: model.i_quad_nom.clone(),
            i_sext_nom: model.i_sext_nom.clone(),
            i_bend_nom: model.i_bend_nom.clone(),
            m_tune: TuneModel::right_inverse(&model.g_tune)?,
            m_chrom: TuneModel::right_inverse(&model.g_chrom)?,
        };
        setup.validate()?;
        Ok(setup)
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.m_tune {
            if c.len() != self.i_quad_nom.len() {
                return Err(Error::ShapeMismatch { expected: self.i_quad_nom.len(), got: c.len() });
            }
        }
        for c in &self.m_chrom {
            if c.len() != self.i_sext_nom.len() {
                return Err(Error::ShapeMismatch { expected: self.i_sext_nom.len(), got: c.len() });
            }
        }
        if self.i_bend_nom.is_empty() || self.i_bend_nom.iter().sum::<f64>() == 0.0 {
            return Err(Error::BadParams("nominal bend currents must not vanish"));
        }
        rank2(&self.m_tune, "tune adjustment")?;
        rank2(&self.m_chrom, "chromaticity adjustment")?;
        Ok(())
    }

    /// Largest deviation of `G M` from the 2x2 identity for the tune and
    /// chromaticity maps of `model`.
    pub fn consistency_error(&self, model: &TuneModel) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for (g, m) in [(&model.g_tune, &self.m_tune), (&model.g_chrom, &self.m_chrom)] {
            if g.len() != m[0].len() {
                return Err(Error::ShapeMismatch { expected: m[0].len(), got: g.len() });
            }
            for (col, m_col) in m.iter().enumerate() {
                for row in 0..2 {
                    let v: f64 = g.iter().zip(m_col).map(|(gr, x)| gr[row] * x).sum();
                    let target = if row == col { 1.0 } else { 0.0 };
                    worst = worst.max(libm::fabs(v - target));
                }
            }
        }
        Ok(worst)
    }
}

pub fn compute_currents(setup: &OpticsSetup, p: &AdjustmentParams) -> Result<MagnetCurrents> {
    setup.validate()?;
    p.validate()?;
    let e = p.s_energy;
    let quad = setup
        .i_quad_nom
        .iter()
        .zip(setup.m_tune[0].iter().zip(&setup.m_tune[1]))
        .map(|(i0, (mx, my))| e * (i0 + mx * p.d_nu_x + my * p.d_nu_y))
        .collect();
    let sext = setup
        .i_sext_nom
        .iter()
        .zip(setup.m_chrom[0].iter().zip(&setup.m_chrom[1]))
        .map(|(i0, (mx, my))| e * p.s_sext * (i0 + mx * p.d_xi_x + my * p.d_xi_y))
        .collect();
    let bend = setup.i_bend_nom.iter().map(|i0| e * i0).collect();
    Ok(MagnetCurrents { quad, sext, bend })
}

pub fn infer_params(setup: &OpticsSetup, currents: &MagnetCurrents) -> Result<Inference> {
    setup.validate()?;
    let check = |got: usize, expected: usize| {
        if got == expected {
            Ok(())
        } else {
            Err(Error::ShapeMismatch { expected, got })
        }
    };
    check(currents.quad.len(), setup.i_quad_nom.len())?;
    check(currents.sext.len(), setup.i_sext_nom.len())?;
    check(currents.bend.len(), setup.i_bend_nom.len())?;

    let s_energy = currents.bend.iter().sum::<f64>() / setup.i_bend_nom.iter().sum::<f64>();
    if !(s_energy > 0.0) || !s_energy.is_finite() {
        return Err(Error::SingularFit);
    }

    // tune shifts: least squares M_tune d_nu = I_quad / s_energy - I_quad_nom
    let q: Vec<f64> = currents.quad.iter().zip(&setup.i_quad_nom).map(|(i, i0)| i / s_energy - i0).collect();
    let [m0, m1] = &setup.m_tune;
    let normal = [[dot(m0, m0), dot(m0, m1)], [dot(m1, m0), dot(m1, m1)]];
    let [d_nu_x, d_nu_y] = solve2(normal, [dot(m0, &q), dot(m1, &q)]).ok_or(Error::SingularFit)?;
    let residual_quad = norm(
        &q.iter().zip(m0.iter().zip(m1)).map(|(qi, (a, b))| qi - a * d_nu_x - b * d_nu_y).collect::<Vec<_>>(),
    );

    // sextupoles: y = s (I_nom + M d_xi) is linear in (s, s d_xi)
    let y: Vec<f64> = currents.sext.iter().map(|i| i / s_energy).collect();
    let a = Matrix::from_columns(&[setup.i_sext_nom.clone(), setup.m_chrom[0].clone(), setup.m_chrom[1].clone()])?;
    let svd = Svd::new(&a)?;
    if svd.s[2] <= 1e-12 * svd.s[0] {
        return Err(Error::SingularFit);
    }
    let w = svd.solve(&y, 0.0)?;
    let s_sext = w[0];
    let (d_xi_x, d_xi_y) = if s_sext != 0.0 { (w[1] / s_sext, w[2] / s_sext) } else { (0.0, 0.0) };
    let fitted = a.mul_vec(&w)?;
    let residual_sext = norm(&y.iter().zip(&fitted).map(|(a, b)| a - b).collect::<Vec<_>>());

    Ok(Inference {
        params: AdjustmentParams { d_nu_x, d_nu_y, d_xi_x, d_xi_y, s_sext, s_energy },
        residual_quad,
        residual_sext,
    })
}
