//! Channel names and the machine database created by the bus daemon.

use ringd_core::feedback::Mode;
use ringd_core::lattice::TuneModel;
use ringd_core::ring::RingConfig;
use ringd_core::{TimedValue, Value};

use crate::bus::{Bus, BusResult, ChannelMeta};

pub const BEAM_CURRENT: &str = "ARIDI-BEAM:CURRENT";
pub const BPM_X: &str = "ARIDI-BPM:X";
pub const BPM_Y: &str = "ARIDI-BPM:Y";
pub const TUNE_X: &str = "RING:TUNE-X";
pub const TUNE_Y: &str = "RING:TUNE-Y";
pub const CHROM_X: &str = "RING:CHROM-X";
pub const CHROM_Y: &str = "RING:CHROM-Y";
pub const TRUE_LIFETIME: &str = "RING:TRUE-LIFETIME";

pub const COR_X: &str = "ARIDI-COR-X:SET";
pub const COR_Y: &str = "ARIDI-COR-Y:SET";
pub const QUAD: &str = "ARIDI-QUAD:SET";
pub const SEXT: &str = "ARIDI-SEXT:SET";
pub const BEND: &str = "ARIDI-BEND:SET";
pub const RF_DELTA_F: &str = "ARIDI-RF:DELTA-F";
pub const TOPUP_ENABLE: &str = "ARIDI-TOPUP:ENABLE";
pub const TOPUP_THRESHOLD: &str = "ARIDI-TOPUP:THRESHOLD";
pub const TOPUP_REFILL: &str = "ARIDI-TOPUP:REFILL";

/// Channels written by the feedback and the optics service.
pub const SETPOINTS: [&str; 6] = [COR_X, COR_Y, QUAD, SEXT, BEND, RF_DELTA_F];

pub const LIFETIME_TWOPOINT: &str = "LIFETIME:TWOPOINT";
pub const LIFETIME_LOGFIT: &str = "LIFETIME:LOGFIT";
pub const LIFETIME_EXPFIT: &str = "LIFETIME:EXPFIT";
pub const LIFETIME_MEDFILT: &str = "LIFETIME:MEDFILT";
pub const LIFETIME_RESULTS: [&str; 4] = [LIFETIME_TWOPOINT, LIFETIME_LOGFIT, LIFETIME_EXPFIT, LIFETIME_MEDFILT];
pub const LIFETIME_WINDOW_N: &str = "LIFETIME:WINDOW-N";
pub const LIFETIME_ENABLE: &str = "LIFETIME:ENABLE";

/// The six optics knobs, in `AdjustmentParams::NAMES` order.
pub const OPTICS_PARAMS: [&str; 6] =
    ["OPTICS:D-NU-X", "OPTICS:D-NU-Y", "OPTICS:D-XI-X", "OPTICS:D-XI-Y", "OPTICS:S-SEXT", "OPTICS:S-ENERGY"];
pub const OPTICS_NAME: &str = "OPTICS:NAME";
pub const OPTICS_APPLY: &str = "OPTICS:APPLY";
pub const OPTICS_RESIDUAL_QUAD: &str = "OPTICS:RESIDUAL-QUAD";
pub const OPTICS_RESIDUAL_SEXT: &str = "OPTICS:RESIDUAL-SEXT";

/// Channel names of one feedback plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedbackChannels {
    pub bpm: &'static str,
    pub correctors: &'static str,
    /// `None` for the plane without a frequency corrector.
    pub rf: Option<&'static str>,
    pub kick_rms: &'static str,
    pub kick_mean: &'static str,
    pub df: Option<&'static str>,
    pub orbit_rms: &'static str,
    pub iterations: &'static str,
    pub mode: &'static str,
    pub period: &'static str,
    pub mask: &'static str,
    pub f_step: Option<&'static str>,
    pub gain: &'static str,
}

pub const OFB_X: FeedbackChannels = FeedbackChannels {
    bpm: BPM_X,
    correctors: COR_X,
    rf: Some(RF_DELTA_F),
    kick_rms: "OFB-XRMS",
    kick_mean: "OFB-XMEAN",
    df: Some("OFB-DF"),
    orbit_rms: "OFB-ORBIT-RMS",
    iterations: "OFB-ITER",
    mode: "OFB:MODE",
    period: "OFB:PERIOD",
    mask: "OFB:SV-MASK",
    f_step: Some("OFB:F-STEP"),
    gain: "OFB:GAIN",
};

pub const OFB_Y: FeedbackChannels = FeedbackChannels {
    bpm: BPM_Y,
    correctors: COR_Y,
    rf: None,
    kick_rms: "OFB-YRMS",
    kick_mean: "OFB-YMEAN",
    df: None,
    orbit_rms: "OFB-Y-ORBIT-RMS",
    iterations: "OFB-Y-ITER",
    mode: "OFB-Y:MODE",
    period: "OFB-Y:PERIOD",
    mask: "OFB-Y:SV-MASK",
    f_step: None,
    gain: "OFB-Y:GAIN",
};

pub const DEFAULT_PERIOD: f64 = 1.0;
pub const DEFAULT_GAIN: f64 = 1.0;
pub const DEFAULT_TOPUP_THRESHOLD: f64 = 149.9;
pub const DEFAULT_TOPUP_REFILL: f64 = 150.0;

/// Name, metadata and initial value of every channel of the machine.
pub fn machine_channels(cfg: &RingConfig, tunes: &TuneModel) -> Vec<(&'static str, ChannelMeta, Value)> {
    let s = ChannelMeta::scalar;
    let v = ChannelMeta::vector;
    let mut out = vec![
        (BEAM_CURRENT, s("mA", "stored beam current"), Value::Scalar(cfg.initial_current)),
        (BPM_X, v(cfg.n_bpm, "mm", "horizontal closed orbit"), Value::Vector(vec![0.0; cfg.n_bpm])),
        (BPM_Y, v(cfg.n_bpm, "mm", "vertical closed orbit"), Value::Vector(vec![0.0; cfg.n_bpm])),
        (TUNE_X, s("", "horizontal tune"), Value::Scalar(tunes.nu_nom[0])),
        (TUNE_Y, s("", "vertical tune"), Value::Scalar(tunes.nu_nom[1])),
        (CHROM_X, s("", "horizontal chromaticity"), Value::Scalar(tunes.xi_nom[0])),
        (CHROM_Y, s("", "vertical chromaticity"), Value::Scalar(tunes.xi_nom[1])),
        (TRUE_LIFETIME, s("h", "lifetime of the simulated loss model"), Value::Scalar(0.0)),
        (COR_X, v(cfg.n_corr, "mrad", "horizontal corrector kicks").writable(), Value::Vector(vec![0.0; cfg.n_corr])),
        (COR_Y, v(cfg.n_corr, "mrad", "vertical corrector kicks").writable(), Value::Vector(vec![0.0; cfg.n_corr])),
        (QUAD, v(cfg.n_quad, "A", "quadrupole currents").writable(), Value::Vector(tunes.i_quad_nom.clone())),
        (SEXT, v(cfg.n_sext, "A", "sextupole currents").writable(), Value::Vector(tunes.i_sext_nom.clone())),
        (BEND, v(cfg.n_bend, "A", "dipole currents").writable(), Value::Vector(tunes.i_bend_nom.clone())),
        (RF_DELTA_F, s("Hz", "RF frequency offset").writable(), Value::Scalar(0.0)),
        (TOPUP_ENABLE, s("", "top-up injection on/off").writable(), Value::Scalar(0.0)),
        (TOPUP_THRESHOLD, s("mA", "top-up trigger current").writable(), Value::Scalar(DEFAULT_TOPUP_THRESHOLD)),
        (TOPUP_REFILL, s("mA", "top-up refill current").writable(), Value::Scalar(DEFAULT_TOPUP_REFILL)),
    ];
    for name in LIFETIME_RESULTS {
        out.push((name, s("h", "beam lifetime"), Value::Scalar(0.0)));
    }
    out.push((LIFETIME_WINDOW_N, s("", "lifetime sample window").writable(), Value::Scalar(30.0)));
    out.push((LIFETIME_ENABLE, s("", "lifetime calculation on/off").writable(), Value::Scalar(1.0)));

    let identity = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0];
    for (name, x) in OPTICS_PARAMS.into_iter().zip(identity) {
        out.push((name, s("", "optics adjustment parameter").writable(), Value::Scalar(x)));
    }
    out.push((OPTICS_NAME, ChannelMeta::text("loaded optics").writable(), Value::Text("none".into())));
    out.push((OPTICS_APPLY, s("", "write to re-apply the optics").writable(), Value::Scalar(0.0)));
    out.push((OPTICS_RESIDUAL_QUAD, s("A", "quadrupole residual of the inferred optics"), Value::Scalar(0.0)));
    out.push((OPTICS_RESIDUAL_SEXT, s("A", "sextupole residual of the inferred optics"), Value::Scalar(0.0)));

    for (ch, n_sv) in [(OFB_X, cfg.n_corr + 1), (OFB_Y, cfg.n_corr)] {
        out.push((ch.kick_rms, s("mrad", "rms of the feedback kicks"), Value::Scalar(0.0)));
        out.push((ch.kick_mean, s("mrad", "mean of the feedback kicks"), Value::Scalar(0.0)));
        if let Some(df) = ch.df {
            out.push((df, s("Hz", "frequency offset applied by the feedback"), Value::Scalar(0.0)));
        }
        out.push((ch.orbit_rms, s("mm", "rms orbit error seen by the feedback"), Value::Scalar(0.0)));
        out.push((ch.iterations, s("", "feedback iterations"), Value::Scalar(0.0)));
        out.push((ch.mode, ChannelMeta::text("STOPPED, PASSIVE or ACTIVE").writable(), Value::Text(Mode::Stopped.as_str().into())));
        out.push((ch.period, s("s", "feedback loop period").writable(), Value::Scalar(DEFAULT_PERIOD)));
        out.push((ch.mask, v(n_sv, "", "singular value enable flags").writable(), Value::Vector(vec![1.0; n_sv])));
        if let Some(f) = ch.f_step {
            out.push((f, s("Hz", "frequency step").writable(), Value::Scalar(ringd_core::feedback::DEFAULT_F_STEP)));
        }
        out.push((ch.gain, s("", "feedback gain").writable(), Value::Scalar(DEFAULT_GAIN)));
    }
    out
}

/// Creates the machine database on `bus` with all timestamps at `t0`.
pub fn create_machine_channels(bus: &Bus, cfg: &RingConfig, tunes: &TuneModel, t0: f64) -> BusResult<()> {
    for (name, meta, value) in machine_channels(cfg, tunes) {
        bus.create_channel(name, meta, TimedValue::new(value, t0))?;
    }
    Ok(())
}
