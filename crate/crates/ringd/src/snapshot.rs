//! Snapshot files: ordered channel/value captures.
//!
//! ```text
//! --- RINGD SNAPSHOT v1 ---
//! # time 2024-05-01T12:00:00.000+00:00
//! # optics user-mode
//! OPTICS:D-NU-X 0.01
//! ARIDI-BPM:X 0.1 0.2 ...
//! <END>
//! ```
//!
//! Values use the channel encoding, so every float survives the round trip
//! bit for bit. Optics and response files are snapshots of pseudo-channels.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use ringd_core::lattice::TuneModel;
use ringd_core::optics::OpticsSetup;
use ringd_core::{ChannelName, Matrix, Value};

use crate::bus::BusAccess;
use crate::error::{BusError, Error, ParseError, Result};

pub const HEADER: &str = "--- RINGD SNAPSHOT v1 ---";
pub const END: &str = "<END>";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Snapshot {
    /// ISO 8601 capture time; filled in on write when empty.
    pub time: Option<String>,
    pub optics: Option<String>,
    pub entries: Vec<(String, Value)>,
}

impl Snapshot {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: impl Into<Value>) {
        self.entries.push((name.into(), value.into()));
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        let time = self.time.clone().unwrap_or_else(now_iso8601);
        let mut out = format!("{HEADER}\n# time {time}\n");
        if let Some(o) = &self.optics {
            let _ = writeln!(out, "# optics {o}");
        }
        for (name, value) in &self.entries {
            out.push_str(name);
            out.push(' ');
            value.encode_into(&mut out);
            out.push('\n');
        }
        out.push_str(END);
        out.push('\n');
        out
    }

    pub fn parse(text: &str) -> std::result::Result<Self, ParseError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
        match lines.next() {
            Some((_, HEADER)) => {}
            Some((n, _)) => return Err(ParseError::new(n, format!("expected {HEADER:?}"))),
            None => return Err(ParseError::new(1, "empty file")),
        }
        let mut snap = Snapshot::new();
        let mut seen = HashSet::new();
        let mut last = 1;
        for (n, line) in lines.by_ref() {
            last = n;
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(t) = comment.strip_prefix("time ") {
                    snap.time = Some(t.trim().to_owned());
                } else if let Some(o) = comment.strip_prefix("optics ") {
                    snap.optics = Some(o.trim().to_owned());
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if line.trim() == END {
                for (n, rest) in lines {
                    if !rest.trim().is_empty() {
                        return Err(ParseError::new(n, "content after <END>"));
                    }
                }
                return Ok(snap);
            }
            let (name, raw) = line.split_once(' ').unwrap_or((line, ""));
            ChannelName::new(name).map_err(|_| ParseError::new(n, format!("invalid channel name {name:?}")))?;
            if raw.trim().is_empty() {
                return Err(ParseError::new(n, format!("{name} has no value")));
            }
            let value = Value::parse_untyped(raw).map_err(|e| ParseError::new(n, format!("{name}: {e}")))?;
            if !seen.insert(name.to_owned()) {
                return Err(ParseError::new(n, format!("{name} appears twice")));
            }
            snap.entries.push((name.to_owned(), value));
        }
        Err(ParseError::new(last + 1, "missing <END>, file truncated"))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub fn now_iso8601() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, false)
}

/// Result of [`save_snapshot`]: the capture and how many channels were
/// listed but could not be read.
#[derive(Debug, Clone, PartialEq)]
pub struct SaveReport {
    pub snapshot: Snapshot,
    pub warnings: usize,
}

/// Captures every channel matching one of `patterns`, in pattern order.
pub fn save_snapshot(bus: &(impl BusAccess + ?Sized), patterns: &[&str], optics: Option<&str>) -> Result<SaveReport> {
    let mut snap = Snapshot { time: Some(now_iso8601()), optics: optics.map(str::to_owned), entries: Vec::new() };
    let mut warnings = 0;
    let mut seen = HashSet::new();
    for pat in patterns {
        let names = bus.list(Some(pat))?;
        if names.is_empty() {
            warn!("{pat} matches no channel");
            warnings += 1;
        }
        for name in names {
            if !seen.insert(name.clone()) {
                continue;
            }
            match bus.get(&name) {
                Ok(tv) => snap.entries.push((name, tv.value)),
                Err(BusError::UnknownChannel(_)) => {
                    warn!("{name} vanished while saving");
                    warnings += 1;
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(SaveReport { snapshot: snap, warnings })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RestoreReport {
    pub applied: usize,
    pub failed: Vec<(String, BusError)>,
}

/// Puts every entry in file order. Failures are collected, not fatal,
/// except a lost connection.
pub fn restore_snapshot(bus: &(impl BusAccess + ?Sized), snap: &Snapshot) -> Result<RestoreReport> {
    let mut report = RestoreReport::default();
    for (name, value) in &snap.entries {
        match bus.put_text(name, &value.encode()) {
            Ok(()) => report.applied += 1,
            Err(e @ (BusError::Disconnected | BusError::Timeout)) => return Err(e.into()),
            Err(e) => {
                warn!("restore of {name} failed: {e}");
                report.failed.push((name.clone(), e));
            }
        }
    }
    Ok(report)
}

pub const OPTICSFILE_I_QUAD_NOM: &str = "OPTICSFILE:I-QUAD-NOM";
pub const OPTICSFILE_I_SEXT_NOM: &str = "OPTICSFILE:I-SEXT-NOM";
pub const OPTICSFILE_I_BEND_NOM: &str = "OPTICSFILE:I-BEND-NOM";
pub const OPTICSFILE_M_TUNE: [&str; 2] = ["OPTICSFILE:M-TUNE-COL0", "OPTICSFILE:M-TUNE-COL1"];
pub const OPTICSFILE_M_CHROM: [&str; 2] = ["OPTICSFILE:M-CHROM-COL0", "OPTICSFILE:M-CHROM-COL1"];

/// Largest `|G M - I|` entry tolerated when checking an optics file
/// against the machine's tune model.
pub const CONSISTENCY_TOL: f64 = 1e-9;

pub fn optics_to_snapshot(setup: &OpticsSetup) -> Snapshot {
    let mut s = Snapshot { optics: Some(setup.name.clone()), ..Snapshot::new() };
    s.push(OPTICSFILE_I_QUAD_NOM, setup.i_quad_nom.clone());
    s.push(OPTICSFILE_M_TUNE[0], setup.m_tune[0].clone());
    s.push(OPTICSFILE_M_TUNE[1], setup.m_tune[1].clone());
    s.push(OPTICSFILE_I_SEXT_NOM, setup.i_sext_nom.clone());
    s.push(OPTICSFILE_M_CHROM[0], setup.m_chrom[0].clone());
    s.push(OPTICSFILE_M_CHROM[1], setup.m_chrom[1].clone());
    s.push(OPTICSFILE_I_BEND_NOM, setup.i_bend_nom.clone());
    s
}

fn vector_entry(snap: &Snapshot, name: &str) -> Result<Vec<f64>> {
    let line = snap.entries.iter().position(|(n, _)| n == name);
    match snap.get(name) {
        Some(v) => v.as_vector().map(<[f64]>::to_vec).ok_or_else(|| {
            Error::Parse(ParseError::new(line.map_or(0, |i| i + 3), format!("{name} is not numeric")))
        }),
        None => Err(Error::Parse(ParseError::new(0, format!("missing {name}")))),
    }
}

/// Builds an optics setup from its file image and checks its invariants.
/// With `model`, the adjustment matrices must also invert the machine's
/// tune and chromaticity maps.
pub fn optics_from_snapshot(snap: &Snapshot, model: Option<&TuneModel>) -> Result<OpticsSetup> {
    let setup = OpticsSetup {
        name: snap.optics.clone().unwrap_or_else(|| "unnamed".into()),
        i_quad_nom: vector_entry(snap, OPTICSFILE_I_QUAD_NOM)?,
        i_sext_nom: vector_entry(snap, OPTICSFILE_I_SEXT_NOM)?,
        i_bend_nom: vector_entry(snap, OPTICSFILE_I_BEND_NOM)?,
        m_tune: [vector_entry(snap, OPTICSFILE_M_TUNE[0])?, vector_entry(snap, OPTICSFILE_M_TUNE[1])?],
        m_chrom: [vector_entry(snap, OPTICSFILE_M_CHROM[0])?, vector_entry(snap, OPTICSFILE_M_CHROM[1])?],
    };
    setup.validate()?;
    if let Some(model) = model {
        let err = setup.consistency_error(model)?;
        if !(err <= CONSISTENCY_TOL) {
            return Err(Error::Config(format!("optics {} does not invert the machine tune model (error {err:e})", setup.name)));
        }
    }
    Ok(setup)
}

pub fn load_optics(path: impl AsRef<Path>, model: Option<&TuneModel>) -> Result<OpticsSetup> {
    let path = path.as_ref();
    let mut snap = Snapshot::read(path)?;
    if snap.optics.is_none() {
        snap.optics = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    }
    optics_from_snapshot(&snap, model)
}

pub fn save_optics(path: impl AsRef<Path>, setup: &OpticsSetup) -> Result<()> {
    optics_to_snapshot(setup).write(path)
}

/// Orbit response as loaded by the feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseFile {
    /// Horizontal response, BPM x corrector, mm/mrad.
    pub r_x: Matrix,
    /// Vertical response; absent in horizontal-only files.
    pub r_y: Option<Matrix>,
    /// Dispersion at the BPMs, mm.
    pub eta: Vec<f64>,
    pub alpha_c: f64,
    pub f0: f64,
}

impl ResponseFile {
    /// Orbit change per Hz of RF offset, mm/Hz.
    pub fn freq_column(&self) -> Vec<f64> {
        let k = -1.0 / (self.alpha_c * self.f0);
        self.eta.iter().map(|e| e * k).collect()
    }
}

impl From<&ringd_core::lattice::ResponseModel> for ResponseFile {
    fn from(m: &ringd_core::lattice::ResponseModel) -> Self {
        Self { r_x: m.r_x.clone(), r_y: Some(m.r_y.clone()), eta: m.eta.clone(), alpha_c: m.alpha_c, f0: m.f0 }
    }
}

fn row_name(plane: &str, i: usize) -> String {
    format!("OFB:{plane}-ROW-{i}")
}

pub fn response_to_snapshot(r: &ResponseFile) -> Snapshot {
    let mut s = Snapshot::new();
    for i in 0..r.r_x.rows() {
        s.push(row_name("R", i), r.r_x.row(i).to_vec());
    }
    if let Some(ry) = &r.r_y {
        for i in 0..ry.rows() {
            s.push(row_name("RY", i), ry.row(i).to_vec());
        }
    }
    s.push("OFB:ETA", r.eta.clone());
    s.push("OFB:ALPHA-C", r.alpha_c);
    s.push("OFB:F0", r.f0);
    s
}

fn matrix_rows(snap: &Snapshot, plane: &str) -> Result<Option<Matrix>> {
    let mut rows = Vec::new();
    while snap.get(&row_name(plane, rows.len())).is_some() {
        rows.push(vector_entry(snap, &row_name(plane, rows.len()))?);
    }
    if rows.is_empty() {
        return Ok(None);
    }
    Ok(Some(Matrix::from_rows(&rows)?))
}

pub fn response_from_snapshot(snap: &Snapshot) -> Result<ResponseFile> {
    let r_x = matrix_rows(snap, "R")?.ok_or_else(|| Error::Parse(ParseError::new(0, "missing OFB:R-ROW-0")))?;
    let r_y = matrix_rows(snap, "RY")?;
    let eta = vector_entry(snap, "OFB:ETA")?;
    let scalar = |name: &str| -> Result<f64> {
        let v = vector_entry(snap, name)?;
        if v.len() == 1 {
            Ok(v[0])
        } else {
            Err(Error::Parse(ParseError::new(0, format!("{name} must be a scalar"))))
        }
    };
    let (alpha_c, f0) = (scalar("OFB:ALPHA-C")?, scalar("OFB:F0")?);
    if eta.len() != r_x.rows() {
        return Err(ringd_core::Error::ShapeMismatch { expected: r_x.rows(), got: eta.len() }.into());
    }
    if let Some(ry) = &r_y {
        if ry.rows() != r_x.rows() {
            return Err(ringd_core::Error::ShapeMismatch { expected: r_x.rows(), got: ry.rows() }.into());
        }
    }
    if alpha_c == 0.0 || !(f0 > 0.0) {
        return Err(Error::Config("response file needs alpha_c != 0 and f0 > 0".into()));
    }
    if !r_x.is_finite() {
        return Err(ringd_core::Error::BadValue("non-finite response").into());
    }
    Ok(ResponseFile { r_x, r_y, eta, alpha_c, f0 })
}

pub fn load_response(path: impl AsRef<Path>) -> Result<ResponseFile> {
    response_from_snapshot(&Snapshot::read(path)?)
}

pub fn save_response(path: impl AsRef<Path>, r: &ResponseFile) -> Result<()> {
    response_to_snapshot(r).write(path)
}
