use nvlink_core::correlator::{analyze_modes, cross_correlate, intensity_trace, lifetime_histogram, LagWindow};
use nvlink_core::emitter::{self, EmitterParams};
use nvlink_core::fitters::{fit_biexponential, fit_g2};
use nvlink_core::linkbudget::{LinkBudget, NoiseBudget};
use nvlink_core::montecarlo::{rate_ledger, simulate, DetectorParams, ExcitationMode, SimConfig};
use nvlink_core::stream::{CHANNEL_A, CHANNEL_B, CHANNEL_SYNC};
use nvlink_core::{merge_streams, TimeTagStream};
use rand::{Rng, SeedableRng};

fn quiet_noise() -> NoiseBudget {
    NoiseBudget {
        alpha1_sin: 0.0,
        alpha2_sin: 0.0,
        fibre_rate_eta_det: 0.0,
        ..NoiseBudget::default()
    }
}

fn unit_budget(emitter: &EmitterParams) -> LinkBudget {
    LinkBudget {
        eta_q: emitter.eta_q,
        tau_rad_ns: Some(emitter.tau_rad_ns),
        eta_wg: 1.0,
        eta_grating: 1.0,
        eta_det: 1.0,
        ..LinkBudget::default()
    }
}

/// Single emitter with every efficiency, so detections track emissions.
fn ideal_config(emitter: EmitterParams, pump_mw: f64, duration_s: f64) -> SimConfig {
    SimConfig {
        mode: ExcitationMode::Cw { duration_s },
        pump_mw,
        budget: unit_budget(&emitter),
        emitter,
        noise: quiet_noise(),
        delay_b_ns: 0.0,
        detectors: [DetectorParams::ideal(), DetectorParams::ideal()],
        ..SimConfig::default()
    }
}

fn two_level() -> EmitterParams {
    EmitterParams {
        tau_rad_ns: 10.0,
        k_es: 0.0,
        k_sg: 0.0,
        eta_q: 1.0,
        p_sat_mw: 1.0,
        blink_off_rate: 0.0,
        ..EmitterParams::default()
    }
}

#[test]
fn two_level_mean_interval() {
    let em = two_level();
    let pump = 0.5;
    let k_exc = emitter::excitation_rate(pump, &em).unwrap();
    let mean_expected = 1.0 / k_exc + 10e-9;
    // One channel only so every emitted photon lands on A.
    let mut cfg = ideal_config(em, pump, 1.02e6 * mean_expected);
    cfg.split_ratio = 1.0;
    let s = simulate(&cfg).unwrap();
    let t = s.channel_times(CHANNEL_A);
    assert!(t.len() > 1_000_000, "{} photons", t.len());
    let mean = (t[t.len() - 1] - t[0]) as f64 * 1e-12 / (t.len() - 1) as f64;
    assert!((mean / mean_expected - 1.0).abs() < 0.01, "{mean} vs {mean_expected}");
}

/// The reference 6 mW operating point without blinking, whose ~10 s telegraph
/// periods would need hours of simulated time to average out.
fn operating_point(duration_s: f64, seed: u64) -> SimConfig {
    SimConfig {
        mode: ExcitationMode::Cw { duration_s },
        pump_mw: 6.0,
        emitter: EmitterParams {
            blink_off_rate: 0.0,
            ..EmitterParams::default()
        },
        rng_seed: seed,
        ..SimConfig::default()
    }
}

#[test]
fn rate_ledger_at_operating_point() {
    let cfg = operating_point(200.0, 3);
    let ledger = rate_ledger(&cfg).unwrap();
    let s = simulate(&cfg).unwrap();
    for (c, ch) in [CHANNEL_A, CHANNEL_B].into_iter().enumerate() {
        let measured = s.count(ch) as f64 / s.duration_s();
        let expected = ledger.channels[c].observed;
        assert!(
            (measured / expected - 1.0).abs() < 0.03,
            "channel {ch}: {measured} vs {expected}"
        );
    }
    // Background and dark dominate the individual channels here.
    let bg = ledger.channels[0].background + ledger.channels[0].dark;
    assert!(bg > ledger.channels[0].signal);
}

#[test]
fn rate_ledger_randomized_configs() {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
    for k in 0..12 {
        let emitter = EmitterParams {
            tau_rad_ns: rng.random_range(5.0..20.0),
            k_es: rng.random_range(0.0..1e7),
            k_sg: rng.random_range(1e6..1e7),
            eta_q: rng.random_range(0.05..1.0),
            n_emitters: rng.random_range(1..4),
            blink_off_rate: 0.0,
            ..EmitterParams::default()
        };
        let budget = LinkBudget {
            eta_q: emitter.eta_q,
            tau_rad_ns: Some(emitter.tau_rad_ns),
            eta_wg: rng.random_range(0.01..0.3),
            eta_grating: rng.random_range(0.01..0.3),
            eta_det: rng.random_range(0.1..0.9),
            ..LinkBudget::default()
        };
        let det = |rng: &mut rand_chacha::ChaCha8Rng| DetectorParams {
            efficiency: rng.random_range(0.3..1.0),
            dark_rate: rng.random_range(0.0..2000.0),
            // Dead-time losses of correlated light are covered separately.
            dead_time_ns: 0.0,
            jitter_sigma_ps: rng.random_range(0.0..500.0),
        };
        let cfg = SimConfig {
            mode: ExcitationMode::Cw { duration_s: 5.0 },
            pump_mw: rng.random_range(0.1..2.5),
            emitter,
            budget,
            split_ratio: rng.random_range(0.2..0.8),
            delay_b_ns: rng.random_range(0.0..100.0),
            detectors: [det(&mut rng), det(&mut rng)],
            rng_seed: k,
            ..SimConfig::default()
        };
        let ledger = rate_ledger(&cfg).unwrap();
        let s = simulate(&cfg).unwrap();
        for c in 0..2 {
            let expected = ledger.channels[c].observed * s.duration_s();
            let n = s.count(c as u8) as f64;
            // Emitter photons are sub-Poissonian and background Poissonian,
            // so √N bounds the standard error from above.
            assert!(
                (n - expected).abs() < 3.0 * expected.sqrt() + 2.0,
                "config {k} channel {c}: {n} vs {expected}"
            );
        }
    }
}

#[test]
fn dead_time_ledger_for_poisson_input() {
    let mut cfg = operating_point(5.0, 21);
    cfg.emitter.n_emitters = 1;
    cfg.pump_mw = 0.0;
    cfg.noise = quiet_noise();
    cfg.detectors = [
        DetectorParams {
            dark_rate: 2.0e6,
            dead_time_ns: 100.0,
            ..DetectorParams::default()
        },
        DetectorParams {
            dark_rate: 5.0e5,
            dead_time_ns: 22.0,
            ..DetectorParams::default()
        },
    ];
    let ledger = rate_ledger(&cfg).unwrap();
    let s = simulate(&cfg).unwrap();
    for c in 0..2 {
        let expected = ledger.channels[c].observed * s.duration_s();
        let n = s.count(c as u8) as f64;
        assert!(
            (n - expected).abs() < 3.0 * expected.sqrt(),
            "channel {c}: {n} vs {expected}"
        );
    }
    // A 2 MHz input loses a sixth of its counts to a 100 ns dead time.
    assert!((ledger.channels[0].observed / ledger.channels[0].total - 1.0 / 1.2).abs() < 1e-12);
}

#[test]
fn deterministic_per_seed() {
    let a = simulate(&operating_point(2.0, 42)).unwrap();
    let b = simulate(&operating_point(2.0, 42)).unwrap();
    let c = simulate(&operating_point(2.0, 43)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn dead_time_respected() {
    let mut cfg = operating_point(20.0, 5);
    cfg.detectors[0].dead_time_ns = 500.0;
    cfg.detectors[0].dark_rate = 1e5;
    let s = simulate(&cfg).unwrap();
    for (ch, dead) in [(CHANNEL_A, 500_000u64), (CHANNEL_B, 22_000u64)] {
        let t = s.channel_times(ch);
        assert!(t.windows(2).all(|w| w[1] - w[0] >= dead));
    }
}

#[test]
fn thinning_halves_emitter_counts() {
    let base = |eta_det: f64, seed: u64| {
        let mut cfg = operating_point(50.0, seed);
        cfg.budget.eta_det = eta_det;
        cfg.noise = quiet_noise();
        cfg.detectors = [DetectorParams::ideal(), DetectorParams::ideal()];
        cfg
    };
    let full = simulate(&base(0.4, 1)).unwrap().len() as f64;
    let half = simulate(&base(0.2, 2)).unwrap().len() as f64;
    assert!((full / half - 2.0).abs() < 6.0 * (2.0 * (1.0 / full + 1.0 / half).sqrt()));

    // Background does not depend on the emitter chain.
    let bg_only = |eta_det: f64| {
        let mut cfg = operating_point(50.0, 7);
        cfg.budget.eta_det = eta_det;
        cfg.pump_mw = 6.0;
        cfg.emitter.n_emitters = 1;
        cfg
    };
    let l1 = rate_ledger(&bg_only(0.4)).unwrap();
    let l2 = rate_ledger(&bg_only(0.2)).unwrap();
    assert_eq!(l1.channels[0].background, l2.channels[0].background);
    assert!((l1.channels[0].signal / l2.channels[0].signal - 2.0).abs() < 1e-12);
}

fn antibunching_config(n_emitters: u32, seed: u64) -> SimConfig {
    let emitter = EmitterParams {
        n_emitters,
        eta_q: 1.0,
        ..EmitterParams::default()
    };
    SimConfig {
        mode: ExcitationMode::Cw { duration_s: 4.0 },
        pump_mw: 1.8,
        budget: LinkBudget {
            eta_wg: 0.05,
            eta_grating: 0.5,
            eta_det: 1.0,
            ..unit_budget(&emitter)
        },
        emitter,
        noise: quiet_noise(),
        detectors: [DetectorParams::ideal(), DetectorParams::ideal()],
        rng_seed: seed,
        ..SimConfig::default()
    }
}

#[test]
fn merged_emitters_halve_the_dip() {
    let a = simulate(&antibunching_config(1, 10)).unwrap();
    let b = simulate(&antibunching_config(1, 11)).unwrap();
    let m = merge_streams(&a, &b).unwrap();
    let h = cross_correlate(&m, CHANNEL_A, CHANNEL_B, 1_000, LagWindow::new(-452_000, 548_000)).unwrap();
    let fit = fit_g2(&h).unwrap();
    let (g0, _) = fit.g2_at_center();
    assert!((g0 - 0.5).abs() < 0.05, "g2(0) = {g0}");
    assert!((fit.params.tau_0 - 48.0).abs() < 1.0);
}

/// Noise budget whose only term is fibre fluorescence at `rate_hz` for the given pump.
fn fibre_only_noise(rate_hz: f64, pump_mw: f64) -> NoiseBudget {
    let nb = quiet_noise();
    NoiseBudget {
        fibre_rate_eta_det: rate_hz / (nb.eta_sc * nb.gamma * nb.eta_grating_fibre * pump_mw / nb.reference_pump_mw),
        ..nb
    }
}

fn pulsed_config(emitter: EmitterParams, pulses: u64, background_per_pulse: f64, seed: u64) -> SimConfig {
    let rep_ns = 1000.0;
    SimConfig {
        mode: ExcitationMode::Pulsed {
            pulse_count: pulses,
            rep_period_ns: rep_ns,
            excitation_probability: 1.0,
            tau_bg_ns: 2.0,
        },
        pump_mw: 1.0,
        budget: LinkBudget {
            eta_wg: 0.1,
            eta_grating: 0.5,
            eta_det: 1.0,
            ..unit_budget(&emitter)
        },
        emitter,
        noise: fibre_only_noise(background_per_pulse / (rep_ns * 1e-9), 1.0),
        split_ratio: 1.0,
        delay_b_ns: 0.0,
        detectors: [DetectorParams::ideal(), DetectorParams::ideal()],
        rng_seed: seed,
        ..SimConfig::default()
    }
}

#[test]
fn pulsed_single_exponential_lifetime() {
    let em = EmitterParams {
        k_es: 0.0,
        eta_q: 1.0,
        ..EmitterParams::default()
    };
    let cfg = pulsed_config(em, 20_000_000, 0.0, 3);
    let s = simulate(&cfg).unwrap();
    let detected = s.count(CHANNEL_A);
    assert!(detected >= 1_000_000, "{detected}");
    let h = lifetime_histogram(&s, CHANNEL_SYNC, CHANNEL_A, 500, 200_000).unwrap();
    let fit = fit_biexponential(&h, None).unwrap();
    let tau = if fit.params.i_1 >= fit.params.i_2 {
        fit.params.t_1
    } else {
        fit.params.t_2
    };
    assert!((tau / 10.0 - 1.0).abs() < 0.02, "{:?}", fit.params);
}

#[test]
fn blinking_trace_is_bimodal() {
    let trace_for = |blink: bool| {
        let emitter = EmitterParams {
            blink_off_rate: if blink { 1.0 / 30.0 } else { 0.0 },
            ..EmitterParams::default()
        };
        let cfg = SimConfig {
            mode: ExcitationMode::Cw { duration_s: 300.0 },
            pump_mw: 3.0 * emitter.p_sat_mw,
            emitter,
            noise: quiet_noise(),
            rng_seed: 8,
            ..SimConfig::default()
        };
        let s = simulate(&cfg).unwrap();
        intensity_trace(&s, &[CHANNEL_A, CHANNEL_B], 1.0).unwrap()
    };
    let on = analyze_modes(&trace_for(true));
    assert!(on.bimodal, "{on:?}");
    let off = analyze_modes(&trace_for(false));
    assert!(!off.bimodal, "{off:?}");
}

#[test]
fn empty_pulse_train_has_no_sync() {
    let cfg = pulsed_config(EmitterParams::default(), 0, 0.0, 1);
    let s: TimeTagStream = simulate(&cfg).unwrap();
    assert!(s.is_empty());
}
