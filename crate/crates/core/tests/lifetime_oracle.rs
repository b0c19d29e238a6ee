use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use ringd_core::lifetime::{lt_expfit, lt_logfit, lt_medfilt, lt_twopoint, Algorithm, SampleWindow};

fn exponential(i0: f64, tau_h: f64, dt: f64, n: usize, t0: f64) -> Vec<(f64, f64)> {
    (0..n).map(|k| {
        let t = t0 + k as f64 * dt;
        (t, i0 * (-(t - t0) / (tau_h * 3600.0)).exp())
    }).collect()
}

#[test]
fn all_algorithms_agree_on_clean_decay() {
    // 30 samples at 2 s span 58 s, well under tau/100 = 360 s
    let s = exponential(150.0, 10.0, 2.0, 30, 0.0);
    for alg in Algorithm::ALL {
        let r = alg.evaluate(&s).unwrap();
        assert!(r.valid);
        assert!((r.tau / 10.0 - 1.0).abs() < 0.01, "{alg:?}: {}", r.tau);
    }
    assert!((lt_logfit(&s).unwrap().tau / 10.0 - 1.0).abs() < 1e-9);
    assert!((lt_expfit(&s).unwrap().tau / 10.0 - 1.0).abs() < 1e-9);
    assert!((lt_medfilt(&s).unwrap().tau / 10.0 - 1.0).abs() < 1e-3);
}

#[test]
fn time_shift_and_current_scale_invariance() {
    let base = exponential(120.0, 7.5, 2.0, 30, 0.0);
    for alg in Algorithm::ALL {
        let r0 = alg.evaluate(&base).unwrap().tau;
        let shifted: Vec<_> = base.iter().map(|&(t, i)| (t + 1.7e9, i)).collect();
        let scaled: Vec<_> = base.iter().map(|&(t, i)| (t, i * 0.37)).collect();
        let r1 = alg.evaluate(&shifted).unwrap().tau;
        let r2 = alg.evaluate(&scaled).unwrap().tau;
        // Epoch-sized timestamps cost ~7 digits of the time resolution.
        assert!((r1 / r0 - 1.0).abs() < 1e-6, "{alg:?} shift {r0} {r1}");
        assert!((r2 / r0 - 1.0).abs() < 1e-9, "{alg:?} scale {r0} {r2}");
    }
}

#[test]
fn twopoint_secant_value() {
    let e = std::f64::consts::E;
    let s = [(0.0, 100.0), (7200.0, 100.0 / e)];
    let expected = (100.0 / e) * 2.0 / (100.0 - 100.0 / e);
    assert!((lt_twopoint(&s).unwrap().tau - expected).abs() < 1e-12);
}

#[test]
fn expfit_noise_monte_carlo() {
    let noise = Normal::new(0.0, 0.001).unwrap();
    let clean = exponential(100.0, 10.0, 2.0, 30, 0.0);
    let trials = 1000;
    let mut within = 0;
    for seed in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s: Vec<_> = clean.iter().map(|&(t, i)| (t, i + noise.sample(&mut rng))).collect();
        let r = lt_expfit(&s).unwrap();
        if r.valid && (r.tau / 10.0 - 1.0).abs() < 0.05 {
            within += 1;
        }
    }
    assert!(within as f64 >= 0.95 * trials as f64, "{within}/{trials}");
}

#[test]
fn medfilt_ignores_single_injection() {
    let mut s = exponential(150.0, 10.0, 2.0, 30, 0.0);
    let clean = lt_medfilt(&s).unwrap().tau;
    for p in s.iter_mut().skip(15) {
        p.1 += 0.2;
    }
    let spiked = lt_medfilt(&s).unwrap().tau;
    assert!((spiked / clean - 1.0).abs() < 0.01);
}

#[test]
fn window_clears_on_injection_jump() {
    let mut w = SampleWindow::new(30);
    for &(t, i) in &exponential(150.0, 10.0, 2.0, 20, 0.0) {
        assert!(!w.push_detecting_injection(t, i).unwrap());
    }
    assert!(w.push_detecting_injection(40.0, 150.5).unwrap());
    assert_eq!(w.len(), 1);
}
