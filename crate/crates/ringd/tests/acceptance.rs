//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if
//! any fails. Run with `cargo test -p ringd --test acceptance`.

use std::process::Command;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use ringd::archiver::{export_csv, query, record, Policy};
use ringd::bus::{Bus, ChannelMeta};
use ringd::lifetime::LifetimeService;
use ringd::ofb::{OfbServer, Outcome};
use ringd::optics::{apply, infer_from_bus};
use ringd::server::serve;
use ringd::sim::RingService;
use ringd::snapshot::{restore_snapshot, save_snapshot, ResponseFile, Snapshot};
use ringd::{db, BusAccess, RemoteBus};
use ringd_core::feedback::{Mode, SvdCorrector};
use ringd_core::lifetime::{Algorithm, SampleWindow};
use ringd_core::optics::{compute_currents, infer_params, AdjustmentParams, OpticsSetup};
use ringd_core::ring::{Ring, RingConfig};
use ringd_core::{Matrix, Status, TimedValue, Value};

type Outcome_ = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn to_na(a: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(a.rows(), a.cols(), a.as_slice())
}

/// Minimum-norm least squares by Householder QR; no SVD involved.
fn qr_min_norm(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let (m, n) = a.shape();
    if m >= n {
        let qr = a.clone().qr();
        qr.r().solve_upper_triangular(&(qr.q().transpose() * b))
    } else {
        let qr = a.transpose().qr();
        let y = qr.r().transpose().solve_lower_triangular(b)?;
        Some(qr.q() * y)
    }
}

/// Finite float64 values drawn from random bit patterns, so subnormals,
/// extreme exponents and negative zero all occur.
fn random_floats(rng: &mut StdRng, n: usize) -> Vec<f64> {
    let mut out = vec![-0.0, 5e-324, f64::MAX, f64::MIN_POSITIVE, 0.1 + 0.2];
    while out.len() < n {
        let x = f64::from_bits(rng.random::<u64>());
        if x.is_finite() {
            out.push(x);
        }
    }
    out.truncate(n);
    out
}

fn bits_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn svd_pseudo_inverse() -> Outcome_ {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(2024);
    let (mut worst_penrose, mut worst_ls) = (0.0f64, 0.0f64);
    for k in 0..100 {
        // sizes sweep from 5x5 to 72x73, square and one column wider
        let m = 5 + (67 * k) / 99;
        let n = if k % 2 == 0 || k == 99 { m + 1 } else { m };
        let (m, n) = if k == 0 { (5, 5) } else { (m, n) };
        let a = Matrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let corr = SvdCorrector::new(&a).map_err(|e| format!("{m}x{n}: {e}"))?;
        let p = to_na(&corr.pseudo_inverse());
        let an = to_na(&a);
        let r1 = (&an * &p * &an - &an).norm() / an.norm();
        let r2 = (&p * &an * &p - &p).norm() / p.norm();
        let (ap, pa) = (&an * &p, &p * &an);
        let r3 = (&ap - ap.transpose()).norm() / ap.norm();
        let r4 = (&pa - pa.transpose()).norm() / pa.norm();
        worst_penrose = worst_penrose.max(r1).max(r2).max(r3).max(r4);
        ensure!(r1.max(r2).max(r3).max(r4) <= 1e-9, "{m}x{n}: Penrose residuals {r1:e}, {r2:e}, {r3:e}, {r4:e}");

        let orbit: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        let c = corr.compute_correction(&orbit).map_err(|e| e.to_string())?;
        let oracle = qr_min_norm(&an, &DVector::from_iterator(m, orbit.iter().map(|x| -x))).ok_or("oracle failed")?;
        let err = (DVector::from_vec(c) - &oracle).norm() / oracle.norm();
        worst_ls = worst_ls.max(err);
        ensure!(err <= 1e-9, "{m}x{n}: correction differs from least squares by {err:e}");
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.1} s");
    Ok(format!("100 matrices, worst Penrose residual {worst_penrose:.1e}, worst LS deviation {worst_ls:.1e}, {secs:.2} s"))
}

fn orbit_kill() -> Outcome_ {
    let bus = Bus::new();
    let cfg = RingConfig { error_kick_rms: 0.03, ..RingConfig::noiseless() };
    let mut ring = RingService::with_database(&bus, cfg, 0.0).map_err(|e| e.to_string())?;
    let mut ofb = OfbServer::new_horizontal(&ResponseFile::from(ring.ring().response())).map_err(|e| e.to_string())?;
    ensure!(ofb.mask().len() == 73 && ofb.mask().iter().all(|&b| b), "mask is not 73 enabled entries");
    ofb.start(&bus, Mode::Active).map_err(|e| e.to_string())?;
    ring.step(&bus, None).map_err(|e| e.to_string())?;
    let first = match ofb.iterate(&bus, 0.0).map_err(|e| e.to_string())? {
        Outcome::Done(it) => it,
        other => return Err(format!("iteration did not run: {other:?}")),
    };
    ring.step(&bus, None).map_err(|e| e.to_string())?;
    // measure the corrected orbit without touching the machine again
    ofb.start(&bus, Mode::Passive).map_err(|e| e.to_string())?;
    ofb.iterate(&bus, 1.0).map_err(|e| e.to_string())?;
    let after = bus.get("OFB-ORBIT-RMS").map_err(|e| e.to_string())?.value.as_scalar().unwrap_or(f64::NAN);
    ensure!(after < 1e-6, "orbit rms {after:e} mm after one iteration (was {:.3e})", first.orbit_rms);
    Ok(format!("orbit rms {:.3e} mm -> {after:.2e} mm, RF {} Hz", first.orbit_rms, first.df_applied))
}

fn sawtooth() -> Outcome_ {
    let started = Instant::now();
    let bus = Bus::new();
    // about 0.5 Hz/s of RF demand: one 10 Hz step every ~20 iterations
    let cfg = RingConfig { circumference_drift_rate: 1e-9, dt: 1.0, ..RingConfig::noiseless() };
    let mut ring = RingService::with_database(&bus, cfg, 0.0).map_err(|e| e.to_string())?;
    let mut ofb = OfbServer::new_horizontal(&ResponseFile::from(ring.ring().response())).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = dir.path().join("ofb.store");
    let stop = Arc::new(AtomicBool::new(false));
    let recorder = {
        let (bus, stop, store) = (bus.clone(), stop.clone(), store.clone());
        let policy = Policy::parse("OFB-DF on-change\nOFB-XMEAN on-change\n").unwrap();
        thread::spawn(move || record(&bus, &policy, &store, &stop))
    };
    // the recorder has subscribed once the initial values are on disk
    let deadline = Instant::now() + Duration::from_secs(10);
    while query(&store, "OFB-XMEAN", f64::NEG_INFINITY, f64::INFINITY).is_err() {
        ensure!(Instant::now() < deadline, "recorder did not start");
        thread::sleep(Duration::from_millis(20));
    }
    bus.put("OFB:MODE", Value::Text("ACTIVE".into())).map_err(|e| e.to_string())?;
    let iterations = 240;
    for i in 0..iterations {
        ofb.absorb_controls(&bus).map_err(|e| e.to_string())?;
        ring.step(&bus, None).map_err(|e| e.to_string())?;
        ofb.iterate(&bus, i as f64).map_err(|e| e.to_string())?;
    }
    stop.store(true, Ordering::SeqCst);
    recorder.join().map_err(|_| "recorder panicked")?.map_err(|e| e.to_string())?;

    let df = query(&store, "OFB-DF", 0.5, f64::INFINITY).map_err(|e| e.to_string())?;
    let xm = query(&store, "OFB-XMEAN", 0.5, f64::INFINITY).map_err(|e| e.to_string())?;
    ensure!(df.records.len() == iterations && xm.records.len() == iterations, "archived {} / {} samples", df.records.len(), xm.records.len());
    let t_df: Vec<f64> = df.records.iter().map(|r| r.timestamp).collect();
    let t_xm: Vec<f64> = xm.records.iter().map(|r| r.timestamp).collect();
    ensure!(t_df == t_xm, "series are not sample aligned");
    let dfv: Vec<f64> = df.records.iter().map(|r| r.value.as_scalar().unwrap_or(f64::NAN)).collect();
    let xmv: Vec<f64> = xm.records.iter().map(|r| r.value.as_scalar().unwrap_or(f64::NAN)).collect();

    for (t, v) in t_df.iter().zip(&dfv) {
        ensure!(v.is_finite() && (v / 10.0).fract() == 0.0, "OFB-DF {v} at t={t} is not a multiple of 10 Hz");
    }
    let steps: Vec<usize> = (1..dfv.len()).filter(|&i| dfv[i] != dfv[i - 1]).collect();
    ensure!(steps.len() >= 5, "only {} frequency steps", steps.len());
    let dir_sign = (dfv[steps[0]] - dfv[steps[0] - 1]).signum();
    for &k in &steps {
        let d = dfv[k] - dfv[k - 1];
        ensure!(d == 10.0 * dir_sign, "OFB-DF jumps by {d} Hz at t={} (not one monotone step); series {:?}", t_df[k], &dfv[..k.min(dfv.len()) + 5]);
    }
    let inc: Vec<f64> = (1..xmv.len()).map(|i| xmv[i] - xmv[i - 1]).collect();
    // inc[j] is the change from sample j to j+1; a step at sample k must
    // flip the sign of the XMEAN increment within 3 iterations
    let mut paired = 0;
    for &k in &steps {
        let before = inc[k - 2].signum();
        let flipped = (k - 1..(k + 2).min(inc.len())).any(|j| inc[j].signum() == -before && before != 0.0);
        ensure!(flipped, "no XMEAN reversal within 3 iterations of the DF step at t={}", t_df[k]);
        paired += 1;
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 30.0, "took {secs:.1} s");
    let amp = xmv.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xmv.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(format!(
        "{} archived samples, OFB-DF {} -> {} Hz in {} steps of 10 Hz, {paired}/{} steps with XMEAN reversal, XMEAN span {amp:.2e} mrad, {secs:.2} s",
        dfv.len(),
        dfv[0],
        dfv[dfv.len() - 1],
        steps.len(),
        steps.len()
    ))
}

fn lifetime() -> Outcome_ {
    // synthetic exponential: tau = 10 h, 2 s sampling, span <= tau/100
    let tau_h = 10.0;
    let tau = tau_h * 3600.0;
    let n = 180;
    let mut w = SampleWindow::new(n);
    for i in 0..n {
        let t = 2.0 * i as f64;
        w.push(t, 150.0 * (-t / tau).exp()).map_err(|e| e.to_string())?;
    }
    let span = 2.0 * (n - 1) as f64;
    ensure!(span <= tau / 100.0, "window span {span} s");
    let mut worst = 0.0f64;
    for alg in Algorithm::ALL {
        let r = w.evaluate(alg).map_err(|e| format!("{alg:?}: {e}"))?;
        let rel = (r.tau / tau_h - 1.0).abs();
        worst = worst.max(rel);
        ensure!(r.valid && rel < 0.01, "{alg:?} gives {} h for {tau_h} h", r.tau);
    }

    // median filter against a single spike in the window
    let clean = w.evaluate(Algorithm::MedFilt).map_err(|e| e.to_string())?.tau;
    let mut spiked = SampleWindow::new(n);
    for (i, (t, i_ma)) in w.to_vec().into_iter().enumerate() {
        let spike = if i == n / 2 { 5.0 } else { 0.0 };
        spiked.push(t, i_ma + spike).map_err(|e| e.to_string())?;
    }
    let with_spike = spiked.evaluate(Algorithm::MedFilt).map_err(|e| e.to_string())?.tau;
    let shift = (with_spike / clean - 1.0).abs();
    ensure!(shift < 0.01, "MEDFILT moved by {:.2}% with a spike", shift * 100.0);

    // live simulator, gas plus Touschek, through the lifetime service
    let bus = Bus::new();
    let cfg = RingConfig { current_noise_rms: 0.001, ..RingConfig::default() };
    let mut ring = RingService::with_database(&bus, cfg, 0.0).map_err(|e| e.to_string())?;
    bus.put(db::LIFETIME_WINDOW_N, Value::Scalar(n as f64)).map_err(|e| e.to_string())?;
    let mut svc = LifetimeService::default();
    let (mut checked, mut worst_live) = (0, 0.0f64);
    let (tau_first, mut tau_last) = (ring.ring().true_lifetime(), 0.0);
    for _ in 0..(4 * 3600 / 2) {
        let rb = ring.step(&bus, None).map_err(|e| e.to_string())?;
        let Some(res) = svc.on_sample(&bus, &TimedValue::new(rb.current, rb.t)).map_err(|e| e.to_string())? else { continue };
        if svc.window().len() < n {
            continue;
        }
        let exp = bus.get(db::LIFETIME_EXPFIT).map_err(|e| e.to_string())?;
        let truth = bus.get(db::TRUE_LIFETIME).map_err(|e| e.to_string())?.value.as_scalar().unwrap_or(f64::NAN);
        ensure!(res[2].valid && exp.status == Status::Ok, "EXPFIT invalid at t={}", rb.t);
        let rel = (exp.value.as_scalar().unwrap_or(f64::NAN) / truth - 1.0).abs();
        worst_live = worst_live.max(rel);
        ensure!(rel < 0.05, "EXPFIT off by {:.2}% at t={}", rel * 100.0, rb.t);
        checked += 1;
        tau_last = truth;
    }
    ensure!(checked > 1000, "only {checked} live comparisons");
    Ok(format!(
        "synthetic worst {:.1e} rel; MEDFILT spike shift {:.1e}; live EXPFIT worst {:.2}% over {checked} samples (true lifetime {:.2} -> {:.2} h)",
        worst,
        shift,
        worst_live * 100.0,
        tau_first,
        tau_last
    ))
}

fn optics() -> Outcome_ {
    let mut rng = StdRng::seed_from_u64(7);
    let ring = Ring::new(RingConfig::noiseless(), 0.0).map_err(|e| e.to_string())?;
    let setup = OpticsSetup::generate("user", ring.tune_model()).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = AdjustmentParams {
            d_nu_x: rng.random_range(-0.1..0.1),
            d_nu_y: rng.random_range(-0.1..0.1),
            d_xi_x: rng.random_range(-2.0..2.0),
            d_xi_y: rng.random_range(-2.0..2.0),
            s_sext: rng.random_range(0.8..1.2),
            s_energy: rng.random_range(0.9..1.1),
        };
        let inf = infer_params(&setup, &compute_currents(&setup, &p).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        for (a, b) in inf.params.to_array().iter().zip(p.to_array()) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure!(worst <= 1e-9, "round trip error {worst:e}");

    // requested tune shifts through the bus and the simulator
    let bus = Bus::new();
    let mut svc = RingService::with_database(&bus, RingConfig::noiseless(), 0.0).map_err(|e| e.to_string())?;
    let (nu_x, nu_y) = (svc.ring().config().nu_x, svc.ring().config().nu_y);
    let mut worst_tune = 0.0f64;
    for _ in 0..20 {
        let p = AdjustmentParams { d_nu_x: rng.random_range(-0.05..0.05), d_nu_y: rng.random_range(-0.05..0.05), ..Default::default() };
        apply(&bus, &setup, &p).map_err(|e| e.to_string())?;
        let rb = svc.step(&bus, None).map_err(|e| e.to_string())?;
        let tx = bus.get(db::TUNE_X).map_err(|e| e.to_string())?.value.as_scalar().unwrap_or(f64::NAN);
        ensure!(tx == rb.tune_x, "tune channel disagrees with the simulator");
        worst_tune = worst_tune.max((rb.tune_x - nu_x - p.d_nu_x).abs()).max((rb.tune_y - nu_y - p.d_nu_y).abs());
        let back = infer_from_bus(&bus, &setup).map_err(|e| e.to_string())?;
        ensure!((back.params.d_nu_x - p.d_nu_x).abs() <= 1e-9, "inferred tune shift differs");
    }
    ensure!(worst_tune <= 1e-9, "tune shift error {worst_tune:e}");

    // 1000 random floats through a snapshot file and back onto a bus
    let values = random_floats(&mut rng, 1000);
    let src = Bus::new();
    let dst = Bus::new();
    let mut expected = Vec::new();
    let mut rest = values.as_slice();
    let mut k = 0;
    while !rest.is_empty() {
        let len = [1, 72, 3, 1, 17][k % 5].min(rest.len());
        let (chunk, tail) = rest.split_at(len);
        rest = tail;
        let name = format!("SNAP:V{k:03}");
        let meta = if len == 1 { ChannelMeta::scalar("", "") } else { ChannelMeta::vector(len, "", "") }.writable();
        let v = if len == 1 { Value::Scalar(chunk[0]) } else { Value::Vector(chunk.to_vec()) };
        src.create_channel(&name, meta.clone(), TimedValue::new(v.clone(), 0.0)).map_err(|e| e.to_string())?;
        dst.create_channel(&name, meta, TimedValue::new(if len == 1 { Value::Scalar(0.0) } else { Value::Vector(vec![0.0; len]) }, 0.0))
            .map_err(|e| e.to_string())?;
        expected.push((name, v));
        k += 1;
    }
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let file = dir.path().join("snap");
    save_snapshot(&src, &["SNAP:*"], None).map_err(|e| e.to_string())?.snapshot.write(&file).map_err(|e| e.to_string())?;
    let report = restore_snapshot(&dst, &Snapshot::read(&file).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure!(report.failed.is_empty() && report.applied == expected.len(), "restore failures {:?}", report.failed);
    for (name, v) in &expected {
        let got = dst.get(name).map_err(|e| e.to_string())?.value;
        ensure!(got.bit_eq(v), "{name} changed through the snapshot");
    }
    Ok(format!(
        "100 round trips worst {worst:.1e}; 20 tune shifts worst {worst_tune:.1e}; {} floats in {} channels bit-exact",
        values.len(),
        expected.len()
    ))
}

fn passive_safety() -> Outcome_ {
    let bus = Bus::new();
    let mut ring = RingService::with_database(&bus, RingConfig::default(), 0.0).map_err(|e| e.to_string())?;
    let server = serve(bus.clone(), "127.0.0.1:0").map_err(|e| e.to_string())?;
    let remote = RemoteBus::connect(server.local_addr()).map_err(|e| e.to_string())?;
    let mut ofb = OfbServer::new_horizontal(&ResponseFile::from(ring.ring().response())).map_err(|e| e.to_string())?;
    // a non-trivial corrector pattern to preserve
    let k: Vec<f64> = (0..72).map(|i| ((i * 7) as f64).sin() * 1e-3 + 0.1 / 3.0).collect();
    bus.put(db::COR_X, Value::Vector(k)).map_err(|e| e.to_string())?;
    bus.put(db::RF_DELTA_F, Value::Scalar(-30.0)).map_err(|e| e.to_string())?;
    remote.put("OFB:MODE", Value::Text("PASSIVE".into())).map_err(|e| e.to_string())?;

    let writable: Vec<String> = bus.list(None).map_err(|e| e.to_string())?.into_iter().filter(|n| bus.meta(n).unwrap().writable).collect();
    let watched: Vec<String> = writable.into_iter().filter(|n| !n.starts_with("OFB")).collect();
    ensure!(db::SETPOINTS.iter().all(|s| watched.iter().any(|w| w == s)), "setpoint list incomplete");
    let snap = |bus: &Bus| -> Vec<(Value, u64)> { watched.iter().map(|n| (bus.get(n).unwrap().value, bus.put_count(n).unwrap())).collect() };
    let before = snap(&bus);
    let mut done = 0;
    for i in 0..100 {
        ring.step(&bus, None).map_err(|e| e.to_string())?;
        ofb.absorb_controls(&remote).map_err(|e| e.to_string())?;
        if let Outcome::Done(_) = ofb.iterate(&remote, i as f64).map_err(|e| e.to_string())? {
            done += 1;
        }
    }
    ensure!(ofb.mode() == Mode::Passive && done == 100, "{done} passive iterations ran");
    let after = snap(&bus);
    for (name, ((v0, c0), (v1, c1))) in watched.iter().zip(before.iter().zip(&after)) {
        ensure!(v0.bit_eq(v1), "{name} changed");
        ensure!(c0 == c1, "{name} put count {c0} -> {c1}");
    }
    let iters = bus.get("OFB-ITER").map_err(|e| e.to_string())?.value.as_scalar().unwrap_or(0.0);
    Ok(format!("{done} iterations (OFB-ITER {iters}), {} writable machine channels untouched", watched.len()))
}

fn protocol() -> Outcome_ {
    let bus = Bus::new();
    bus.create_channel("T:S", ChannelMeta::scalar("", "").writable(), TimedValue::new(0.0, 0.0)).map_err(|e| e.to_string())?;
    bus.create_channel("T:V", ChannelMeta::vector(1000, "", "").writable(), TimedValue::new(vec![0.0; 1000], 0.0))
        .map_err(|e| e.to_string())?;
    let server = serve(bus.clone(), "127.0.0.1:0").map_err(|e| e.to_string())?;
    let addr = server.local_addr().to_string();
    let exe = env!("CARGO_BIN_EXE_ringd");
    let tool = |args: &[&str]| -> Result<String, String> {
        let o = Command::new(exe).args(args).env("RINGD_BUS_ADDR", &addr).output().map_err(|e| e.to_string())?;
        ensure!(o.status.success(), "ringd {args:?} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
        String::from_utf8(o.stdout).map_err(|e| e.to_string())
    };
    let parse_last = |line: &str, skip: usize| -> Result<Vec<f64>, String> {
        line.split_whitespace().skip(skip).map(|w| w.parse::<f64>().map_err(|e| format!("{w}: {e}"))).collect()
    };

    let mut rng = StdRng::seed_from_u64(99);
    let values = random_floats(&mut rng, 1000);
    // the whole set as one vector through put, get and monitor
    let words: Vec<String> = values.iter().map(|x| format!("{x:?}")).collect();
    let mut args = vec!["put", "T:V"];
    args.extend(words.iter().map(String::as_str));
    tool(&args)?;
    ensure!(bus.get("T:V").unwrap().value.bit_eq(&Value::Vector(values.clone())), "put altered the vector");
    ensure!(bits_equal(&parse_last(&tool(&["get", "T:V"])?, 2)?, &values), "get altered the vector");
    ensure!(bits_equal(&parse_last(&tool(&["monitor", "--count", "1", "T:V"])?, 3)?, &values), "monitor altered the vector");
    // and a sample of single scalars
    for &x in values.iter().step_by(50) {
        tool(&["put", "T:S", &format!("{x:?}")])?;
        let got = parse_last(&tool(&["get", "T:S"])?, 2)?;
        ensure!(bits_equal(&got, &[x]), "scalar {x:?} came back as {got:?}");
    }

    // 10 monitor clients, one 1000-put burst from an 11th
    let clients: Vec<RemoteBus> = (0..10).map(|_| RemoteBus::connect(&addr)).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    let subs: Vec<_> = clients.iter().map(|c| c.monitor("T:S")).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    for s in &subs {
        s.recv_timeout(Duration::from_secs(5)).map_err(|_| "no initial event")?;
    }
    let writer = RemoteBus::connect(&addr).map_err(|e| e.to_string())?;
    let burst = random_floats(&mut rng, 1000);
    let started = Instant::now();
    for &x in &burst {
        writer.put("T:S", Value::Scalar(x)).map_err(|e| e.to_string())?;
    }
    for (c, s) in subs.iter().enumerate() {
        for (i, &x) in burst.iter().enumerate() {
            let ev = s.recv_timeout(Duration::from_secs(10)).map_err(|_| format!("client {c} missed event {i}"))?;
            let got = ev.value.value.as_scalar().unwrap_or(f64::NAN);
            ensure!(got.to_bits() == x.to_bits(), "client {c} event {i}: {got:?} instead of {x:?}");
        }
        ensure!(s.try_recv().is_err(), "client {c} got extra events");
    }
    Ok(format!(
        "{} values bit-exact through put/get/monitor, 10 clients x 1000 events in order ({:.2} s)",
        values.len() + values.len().div_ceil(50),
        started.elapsed().as_secs_f64()
    ))
}

fn archiver() -> Outcome_ {
    let bus = Bus::new();
    bus.create_channel("ARCH:S", ChannelMeta::scalar("", "").writable(), TimedValue::new(0.0, 0.0)).map_err(|e| e.to_string())?;
    bus.create_channel("ARCH:V", ChannelMeta::vector(4, "", "").writable(), TimedValue::new(vec![0.0; 4], 0.0)).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = dir.path().join("store");
    let stop = Arc::new(AtomicBool::new(false));
    let rec = {
        let (bus, stop, store) = (bus.clone(), stop.clone(), store.clone());
        thread::spawn(move || record(&bus, &Policy::on_change("ARCH:*"), &store, &stop))
    };
    let deadline = Instant::now() + Duration::from_secs(10);
    while query(&store, "ARCH:V", f64::NEG_INFINITY, f64::INFINITY).is_err() {
        ensure!(Instant::now() < deadline, "recorder did not start");
        thread::sleep(Duration::from_millis(20));
    }
    let mut rng = StdRng::seed_from_u64(5);
    let floats = random_floats(&mut rng, 5000 + 4 * 5000);
    let (mut s_vals, mut v_vals) = (Vec::new(), Vec::new());
    for i in 0..5000 {
        let t = 1.0 + i as f64 * 0.5;
        bus.publish("ARCH:S", TimedValue::new(floats[i], t)).map_err(|e| e.to_string())?;
        let v = floats[5000 + 4 * i..5000 + 4 * i + 4].to_vec();
        bus.publish("ARCH:V", TimedValue::new(v.clone(), t + 0.25)).map_err(|e| e.to_string())?;
        s_vals.push((t, floats[i]));
        v_vals.push((t + 0.25, v));
    }
    thread::sleep(Duration::from_millis(200));
    stop.store(true, Ordering::SeqCst);
    let stats = rec.join().map_err(|_| "recorder panicked")?.map_err(|e| e.to_string())?;
    ensure!(stats.records == 10_002, "{} records written", stats.records);

    let s = query(&store, "ARCH:S", 1.0, f64::INFINITY).map_err(|e| e.to_string())?;
    let v = query(&store, "ARCH:V", 1.0, f64::INFINITY).map_err(|e| e.to_string())?;
    ensure!(s.corrupt.is_empty() && v.corrupt.is_empty(), "corrupt lines in the store");
    ensure!(s.records.len() == 5000 && v.records.len() == 5000, "queried {} + {} records", s.records.len(), v.records.len());
    for (r, (t, x)) in s.records.iter().zip(&s_vals) {
        ensure!(r.timestamp == *t && r.value.bit_eq(&Value::Scalar(*x)), "scalar record at {t} differs");
    }
    for (r, (t, x)) in v.records.iter().zip(&v_vals) {
        ensure!(r.timestamp == *t && r.value.bit_eq(&Value::Vector(x.clone())), "vector record at {t} differs");
    }

    // window edges land exactly on records
    let (t0, t1) = (s_vals[100].0, s_vals[199].0);
    let w = query(&store, "ARCH:S", t0, t1).map_err(|e| e.to_string())?;
    ensure!(w.records.len() == 100, "window [{t0}, {t1}] returned {} records", w.records.len());
    ensure!(w.records[0].timestamp == t0 && w.records[99].timestamp == t1, "window boundaries not inclusive");
    ensure!(w.records.windows(2).all(|p| p[0].timestamp <= p[1].timestamp), "window not sorted");
    ensure!(query(&store, "ARCH:S", t0 + 0.1, t0 + 0.2).map_err(|e| e.to_string())?.records.is_empty(), "empty window not empty");

    // CSV of both series reads back bit-exact
    for (series, width) in [(&s, 1usize), (&v, 4)] {
        let path = dir.path().join(format!("{}.csv", series.name.replace(':', "_")));
        export_csv(series, &path, false).map_err(|e| e.to_string())?;
        let mut rd = csv::Reader::from_path(&path).map_err(|e| e.to_string())?;
        let header: Vec<String> = rd.headers().map_err(|e| e.to_string())?.iter().map(str::to_owned).collect();
        ensure!(header.len() == width + 1 && header[0] == "t", "CSV header {header:?}");
        let mut n = 0;
        for (row, r) in rd.records().zip(&series.records) {
            let row = row.map_err(|e| e.to_string())?;
            let nums: Vec<f64> = row.iter().map(|c| c.parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
            ensure!(nums[0].to_bits() == r.timestamp.to_bits(), "CSV time differs");
            let want = match &r.value {
                Value::Scalar(x) => vec![*x],
                Value::Vector(x) => x.clone(),
                Value::Text(_) => return Err("text in numeric series".into()),
            };
            ensure!(bits_equal(&nums[1..], &want), "CSV row at t={} differs", r.timestamp);
            n += 1;
        }
        ensure!(n == series.records.len(), "CSV has {n} rows");
    }
    Ok(format!("{} records stored, 10000 queried and exported bit-exact, inclusive sorted windows", stats.records))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome_); 8] = [
        ("SVD pseudo-inverse correctness", svd_pseudo_inverse),
        ("One-iteration orbit kill", orbit_kill),
        ("Sawtooth reproduction", sawtooth),
        ("Lifetime engines", lifetime),
        ("Optics round trip", optics),
        ("Passive-mode safety", passive_safety),
        ("Protocol conformance", protocol),
        ("Archiver", archiver),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("[PASS] {name} ({secs:.2} s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {name} ({secs:.2} s): {why}");
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", 8 - failed, 8);
    if failed > 0 {
        std::process::exit(1);
    }
}
