//! Services running as remote clients of a served bus, the way the
//! binaries deploy them.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use ringd::bus::{get_vector, Bus};
use ringd::lifetime::LifetimeService;
use ringd::ofb::{OfbServer, Outcome};
use ringd::optics::OpticsServer;
use ringd::server::{serve, ServerHandle};
use ringd::sim::RingService;
use ringd::snapshot::ResponseFile;
use ringd::{db, BusAccess, RemoteBus};
use ringd_core::feedback::Mode;
use ringd_core::optics::OpticsSetup;
use ringd_core::ring::RingConfig;
use ringd_core::{Status, Value};

fn machine(cfg: RingConfig) -> (Bus, RingService, ServerHandle) {
    let bus = Bus::new();
    let ring = RingService::with_database(&bus, cfg, 0.0).unwrap();
    let server = serve(bus.clone(), "127.0.0.1:0").unwrap();
    (bus, ring, server)
}

fn wait_for(what: &str, mut cond: impl FnMut() -> bool) {
    let deadline = Instant::now() + Duration::from_secs(10);
    while !cond() {
        assert!(Instant::now() < deadline, "timed out waiting for {what}");
        thread::sleep(Duration::from_millis(10));
    }
}

#[test]
fn remote_lifetime_service_tracks_true_lifetime() {
    let cfg = RingConfig { tau_gas: 20.0, ..RingConfig::noiseless() };
    let (bus, mut ring, server) = machine(cfg);
    let stop = Arc::new(AtomicBool::new(false));
    let remote = RemoteBus::connect(server.local_addr()).unwrap();
    let t = {
        let stop = stop.clone();
        thread::spawn(move || LifetimeService::new(60).run(&remote, &stop).unwrap())
    };
    // the service subscribes, then receives the initial current
    wait_for("subscription", || bus.get(db::LIFETIME_EXPFIT).unwrap().status == Status::Invalid);
    for _ in 0..120 {
        let rb = ring.step(&bus, Some(10.0)).unwrap();
        wait_for("lifetime update", || bus.get(db::LIFETIME_EXPFIT).unwrap().timestamp >= rb.t);
    }
    let truth = bus.get(db::TRUE_LIFETIME).unwrap().value.as_scalar().unwrap();
    for name in db::LIFETIME_RESULTS {
        let tv = bus.get(name).unwrap();
        assert_eq!(tv.status, Status::Ok, "{name}");
        let tau = tv.value.as_scalar().unwrap();
        assert!((tau / truth - 1.0).abs() < 0.05, "{name}: {tau} vs {truth}");
    }
    stop.store(true, Ordering::SeqCst);
    t.join().unwrap();
}

#[test]
fn remote_optics_server_follows_parameter_puts() {
    let (bus, mut ring, server) = machine(RingConfig::noiseless());
    let setup = OpticsSetup::generate("user", ring.ring().tune_model()).unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let remote = RemoteBus::connect(server.local_addr()).unwrap();
    let t = {
        let stop = stop.clone();
        thread::spawn(move || OpticsServer::new(setup).run(&remote, &stop).unwrap())
    };
    wait_for("initial application", || bus.put_count(db::QUAD).unwrap() == 1);
    let client = RemoteBus::connect(server.local_addr()).unwrap();
    client.put("OPTICS:D-NU-Y", Value::Scalar(-0.03)).unwrap();
    wait_for("re-application", || bus.put_count(db::QUAD).unwrap() >= 2);
    let rb = ring.step(&bus, None).unwrap();
    assert!((rb.tune_y - (ring.ring().config().nu_y - 0.03)).abs() < 1e-9, "{}", rb.tune_y);
    stop.store(true, Ordering::SeqCst);
    t.join().unwrap();
}

#[test]
fn remote_feedback_passive_then_active() {
    let cfg = RingConfig { error_kick_rms: 0.03, ..RingConfig::noiseless() };
    let (bus, mut ring, server) = machine(cfg);
    let remote = RemoteBus::connect(server.local_addr()).unwrap();
    let mut ofb = OfbServer::new_horizontal(&ResponseFile::from(ring.ring().response())).unwrap();
    ofb.publish_controls(&remote).unwrap();

    remote.put("OFB:MODE", Value::Text("PASSIVE".into())).unwrap();
    let before = get_vector(&bus, db::COR_X).unwrap();
    for i in 0..20 {
        ring.step(&bus, None).unwrap();
        ofb.absorb_controls(&remote).unwrap();
        assert!(matches!(ofb.iterate(&remote, i as f64).unwrap(), Outcome::Done(_)));
    }
    assert_eq!(ofb.mode(), Mode::Passive);
    assert_eq!(bus.put_count(db::COR_X).unwrap(), 0);
    assert!(bus.get(db::COR_X).unwrap().value.bit_eq(&Value::Vector(before)));
    assert_eq!(bus.get("OFB-ITER").unwrap().value, Value::Scalar(20.0));
    assert!(bus.get("OFB-ORBIT-RMS").unwrap().value.as_scalar().unwrap() > 1e-3);

    remote.put("OFB:MODE", Value::Text("ACTIVE".into())).unwrap();
    ofb.absorb_controls(&remote).unwrap();
    ring.step(&bus, None).unwrap();
    ofb.iterate(&remote, 20.0).unwrap();
    ring.step(&bus, None).unwrap();
    let Outcome::Done(it) = ofb.iterate(&remote, 21.0).unwrap() else { panic!("no iteration") };
    assert!(it.orbit_rms < 1e-6, "{}", it.orbit_rms);
    let df = bus.get("OFB-DF").unwrap().value.as_scalar().unwrap();
    assert_eq!(df % 10.0, 0.0);
    assert_eq!(bus.get(db::RF_DELTA_F).unwrap().value, Value::Scalar(df));
}

#[test]
fn feedback_thread_runs_at_its_period() {
    let cfg = RingConfig { error_kick_rms: 0.03, ..RingConfig::noiseless() };
    let (bus, mut ring, server) = machine(cfg);
    let remote = RemoteBus::connect(server.local_addr()).unwrap();
    let mut ofb = OfbServer::new_horizontal(&ResponseFile::from(ring.ring().response())).unwrap();
    ofb.set_period(0.05).unwrap();
    ofb.start(&remote, Mode::Active).unwrap();
    let stop = Arc::new(AtomicBool::new(false));
    let t = {
        let stop = stop.clone();
        thread::spawn(move || ofb.run(&remote, &stop).unwrap())
    };
    let deadline = Instant::now() + Duration::from_secs(2);
    while Instant::now() < deadline {
        ring.step(&bus, None).unwrap();
        thread::sleep(Duration::from_millis(20));
    }
    stop.store(true, Ordering::SeqCst);
    t.join().unwrap();
    let iters = bus.get("OFB-ITER").unwrap().value.as_scalar().unwrap();
    assert!(iters >= 10.0, "{iters} iterations");
    let x = get_vector(&bus, db::BPM_X).unwrap();
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    assert!(rms < 1e-6, "{rms}");
}
