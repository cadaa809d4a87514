//! End-to-end tests of the `nvlink` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nvlink_cli::ttag;
use nvlink_core::emitter::{analytic_g2, background_degrade, G2Params};
use nvlink_core::stream::{TimeTag, TimeTagStream};
use proptest::prelude::*;
use serde_json::{json, Value};
use tempfile::TempDir;

fn nvlink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvlink"))
        .args(args)
        .env("NVLINK_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
}

fn write_json(dir: &TempDir, name: &str, v: &Value) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p
}

fn ideal_detector() -> Value {
    json!({ "dark_rate": 0.0, "dead_time_ns": 0.0, "jitter_sigma_ps": 0.0 })
}

/// Bright single emitter with no background, enough for a clean dip in a second or two.
fn bright_config(mode: Value, seed: u64) -> Value {
    json!({
        "seed": seed,
        "mode": mode,
        "emitter": { "eta_q": 1.0 },
        "budget": { "eta_wg": 0.05, "eta_grating": 0.5, "eta_det": 1.0 },
        "noise": { "alpha1_sin": 0.0, "alpha2_sin": 0.0, "fibre_rate_eta_det": 0.0, "dark_rate": 0.0 },
        "detectors": [ideal_detector(), ideal_detector()],
    })
}

fn simulate(dir: &TempDir, cfg: &Value, name: &str) -> PathBuf {
    let c = write_json(dir, &format!("{name}.json"), cfg);
    let out = dir.path().join(format!("{name}.ttag"));
    assert_ok(&nvlink(&["simulate", path_str(&c), "--out", path_str(&out)]));
    out
}

fn budget_json(args: &[&str]) -> Value {
    let mut all = vec!["budget", "--json"];
    all.extend_from_slice(args);
    let o = nvlink(&all);
    assert_ok(&o);
    serde_json::from_str(&stdout(&o)).unwrap()
}

#[test]
fn simulate_is_deterministic_and_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = json!({ "seed": 9, "mode": { "cw": { "duration_s": 1.0 } } });
    let a = simulate(&dir, &cfg, "a");
    let b = simulate(&dir, &cfg, "b");
    let bytes = std::fs::read(&a).unwrap();
    assert!(bytes.len() > ttag::HEADER_LEN as usize);
    assert_eq!(bytes, std::fs::read(&b).unwrap());

    let c = dir.path().join("c.ttag");
    let cfg_path = dir.path().join("a.json");
    assert_ok(&nvlink(&[
        "simulate",
        path_str(&cfg_path),
        "--out",
        path_str(&c),
        "--seed",
        "10",
    ]));
    assert_ne!(bytes, std::fs::read(&c).unwrap());

    let manifest = dir.path().join("a.manifest.json");
    let m: Value = serde_json::from_slice(&std::fs::read(&manifest).unwrap()).unwrap();
    assert_eq!(m["seed"], 9);
    assert_eq!(m["output"]["bytes"], bytes.len() as u64);
    assert!(m["rng_algorithm"].as_str().unwrap().starts_with("ChaCha20"));

    let again = dir.path().join("again.ttag");
    assert_ok(&nvlink(&["repro", path_str(&manifest), "--out", path_str(&again)]));
    assert_eq!(bytes, std::fs::read(&again).unwrap());

    let mut tampered = m.clone();
    tampered["output"]["sha256"] = json!("00");
    let t = write_json(&dir, "tampered.manifest.json", &tampered);
    assert_eq!(nvlink(&["repro", path_str(&t)]).status.code(), Some(3));
}

#[test]
fn zero_duration_gives_header_only_file() {
    let dir = TempDir::new().unwrap();
    let out = simulate(&dir, &json!({ "mode": { "cw": { "duration_s": 0.0 } } }), "empty");
    let bytes = std::fs::read(&out).unwrap();
    assert_eq!(bytes.len(), ttag::HEADER_LEN as usize);

    let o = nvlink(&["correlate", path_str(&out)]);
    assert_ok(&o);
    let text = stdout(&o);
    let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body, ["lag_ps,counts,g2"]);

    let o = nvlink(&["lifetime", path_str(&out)]);
    assert_ok(&o);
    assert_eq!(stdout(&o).lines().filter(|l| !l.starts_with('#')).count(), 1);
}

#[test]
fn schema_errors_exit_2_with_pointer() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.ttag");
    for (cfg, pointer) in [
        (json!({ "emitter": { "tau_rad_ns": "ten" } }), "/emitter/tau_rad_ns"),
        (json!({ "detectors": [{}, { "jiter": 1 }] }), "/detectors/1"),
        (json!({ "mode": { "cw": {} } }), "/mode"),
    ] {
        let c = write_json(&dir, "bad.json", &cfg);
        let o = nvlink(&["simulate", path_str(&c), "--out", path_str(&out)]);
        assert_eq!(o.status.code(), Some(2), "{cfg}");
        assert!(stderr(&o).contains(pointer), "{}", stderr(&o));
    }
    // Well-formed but physically invalid.
    let c = write_json(&dir, "invalid.json", &json!({ "budget": { "eta_wg": 1.5 } }));
    assert_eq!(
        nvlink(&["simulate", path_str(&c), "--out", path_str(&out)])
            .status
            .code(),
        Some(2)
    );
    assert!(!out.exists());
}

#[test]
fn malformed_ttag_exits_3_with_offset() {
    let dir = TempDir::new().unwrap();
    let s = TimeTagStream::new(vec![TimeTag::new(0, 10), TimeTag::new(1, 20)], 100, 2).unwrap();
    let mut bytes = ttag::encode(&s);
    // Channel byte of the second record.
    let at = (ttag::HEADER_LEN + ttag::RECORD_LEN + 8) as usize;
    bytes[at] = 5;
    let p = dir.path().join("bad.ttag");
    std::fs::write(&p, &bytes).unwrap();
    for cmd in ["correlate", "lifetime", "trace"] {
        let o = nvlink(&[cmd, path_str(&p)]);
        assert_eq!(o.status.code(), Some(3), "{cmd}");
        assert!(stderr(&o).contains(&format!("byte {at}")), "{}", stderr(&o));
    }
    let missing = dir.path().join("missing.ttag");
    assert_eq!(nvlink(&["correlate", path_str(&missing)]).status.code(), Some(3));
}

#[test]
fn correlation_paths_agree_and_dip_sits_at_delay() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, &bright_config(json!({ "cw": { "duration_s": 1.0 } }), 4), "hbt");
    let csv = dir.path().join("g2.csv");
    assert_ok(&nvlink(&[
        "correlate",
        path_str(&data),
        "--out",
        path_str(&csv),
        "--lag-min-ps",
        "-452000",
        "--lag-max-ps",
        "548000",
    ]));
    let text = std::fs::read_to_string(&csv).unwrap();

    // The oracle path is brute force, so check it on a short acquisition.
    let short = simulate(
        &dir,
        &bright_config(json!({ "cw": { "duration_s": 0.03 } }), 5),
        "short",
    );
    let window = ["--lag-min-ps", "-452000", "--lag-max-ps", "548000"];
    let plain = nvlink(&[&["correlate", path_str(&short)][..], &window].concat());
    assert_ok(&plain);
    let checked = nvlink(
        &[
            &["correlate", path_str(&short), "--verify-oracle", "--shards", "3"][..],
            &window,
        ]
        .concat(),
    );
    assert_ok(&checked);
    assert_eq!(stdout(&plain), stdout(&checked));

    // Smallest bin within ±100 ns of zero lag should be the delay line.
    let (lag, _) = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse::<i64>().unwrap(), f[1].parse::<u64>().unwrap())
        })
        .filter(|(lag, _)| lag.abs() <= 100_000)
        .min_by_key(|&(_, c)| c)
        .unwrap();
    assert!((lag - 48_000).abs() <= 2_000, "minimum at {lag} ps");

    let o = nvlink(&["fit", path_str(&csv), "--model", "g2"]);
    assert_ok(&o);
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((r["params"]["tau_0"].as_f64().unwrap() - 48.0).abs() < 1.0, "{r}");
    assert!(r["g2_tau0"].as_f64().unwrap() < 0.1, "{r}");
    assert_eq!(r["emitter_count"]["n"], 1);
}

#[test]
fn pulsed_lifetime_round_trip() {
    let dir = TempDir::new().unwrap();
    let mode = json!({ "pulsed": { "pulse_count": 2_000_000, "excitation_probability": 1.0 } });
    let data = simulate(&dir, &bright_config(mode, 6), "pulsed");
    let csv = dir.path().join("lifetime.csv");
    assert_ok(&nvlink(&[
        "lifetime",
        path_str(&data),
        "--out",
        path_str(&csv),
        "--bin-width-ps",
        "1000",
        "--range-ps",
        "100000",
    ]));
    let report = dir.path().join("lifetime.json");
    assert_ok(&nvlink(&[
        "fit",
        path_str(&csv),
        "--model",
        "lifetime",
        "--out",
        path_str(&report),
    ]));
    let r: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    // No background, so one component carries the 10 ns radiative decay.
    let p = &r["params"];
    let f = |k: &str| p[k].as_f64().unwrap();
    let tau = if f("I_1") >= f("I_2") { f("t_1") } else { f("t_2") };
    assert!((tau - 10.0).abs() < 0.3, "tau = {tau}: {r}");
}

#[test]
fn background_corrected_g2_fit() {
    let dir = TempDir::new().unwrap();
    let truth = G2Params {
        p_ge: 1.2,
        p_s: 0.2,
        tau_ge: 8.0,
        tau_s: 150.0,
        tau_0: 48.0,
    };
    let sigma = 0.42;
    let norm = 1.0e4;
    let mut text =
        format!("# bin_width_ps=1000\n# rate_a=1e4\n# rate_b=1e4\n# acquisition_time_s=1e5\nlag_ps,counts,g2\n");
    for i in 0..1000 {
        let lower = -452_000 + 1000 * i as i64;
        let g = background_degrade(analytic_g2(lower as f64 * 1e-3 + 0.5, &truth), sigma).unwrap();
        text.push_str(&format!("{lower},{},{g}\n", (g * norm).round()));
    }
    let csv = dir.path().join("raw.csv");
    std::fs::write(&csv, text).unwrap();
    let o = nvlink(&["fit", path_str(&csv), "--model", "g2", "--sigma", "0.42"]);
    assert_ok(&o);
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(r["g2_tau0"].as_f64().unwrap().abs() < 0.05, "{r}");
    assert!(
        (r["g2_tau0_raw"].as_f64().unwrap() - (1.0 - sigma * sigma)).abs() < 0.05,
        "{r}"
    );
    assert_eq!(r["emitter_count"]["n"], 1);
    assert_eq!(r["background_sigma"], 0.42);

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "lag_ps,counts,g2\n0,1,oops\n").unwrap();
    let o = nvlink(&["fit", path_str(&bad), "--model", "g2"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("not a number"), "{}", stderr(&o));
    let o = nvlink(&["fit", path_str(&csv), "--model", "g2", "--sigma", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn saturation_fit_from_csv() {
    let dir = TempDir::new().unwrap();
    let mut text = String::from("power_mw,rate,sigma\n");
    for p in [0.1, 0.3, 0.6, 1.0, 2.0, 4.0, 8.0, 12.0] {
        let r: f64 = 3000.0 * p / (p + 1.5);
        text.push_str(&format!("{p},{r},{}\n", 0.01 * r));
    }
    let csv = dir.path().join("sat.csv");
    std::fs::write(&csv, text).unwrap();
    let o = nvlink(&["fit", path_str(&csv), "--model", "saturation", "--reduced"]);
    assert_ok(&o);
    let r: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((r["params"]["R_sat"].as_f64().unwrap() - 3000.0).abs() < 1.0, "{r}");
    assert!((r["params"]["P_sat"].as_f64().unwrap() - 1.5).abs() < 1e-3, "{r}");
    assert_eq!(r["reduced_model"], true);
}

#[test]
fn budget_defaults() {
    let r = budget_json(&[]);
    assert!((r["detected_rate"].as_f64().unwrap() - 2646.0).abs() < 0.5, "{r}");
    let n = &r["noise_at_1mw"];
    assert!((n["r1_sin"].as_f64().unwrap() - 8.1).abs() < 0.01);
    assert!((n["r2_sin"].as_f64().unwrap() - 0.9).abs() < 0.01);
    assert!((n["r1_fibre"].as_f64().unwrap() - 156.0).abs() < 0.1);
    assert!((r["fibre_fraction"].as_f64().unwrap() - 0.946).abs() < 0.001);

    let six = budget_json(&["--pump-mw", "6"]);
    assert!((six["noise_at_pump"]["r1_fibre"].as_f64().unwrap() - 936.0).abs() < 0.5);
    assert_eq!(six["pump_mw"], 6.0);
}

#[test]
fn budget_scales_with_gamma_and_passes_unity_efficiencies() {
    let dir = TempDir::new().unwrap();
    let mut last = 0.0;
    for (gamma, fibre) in [(1.0, 52.0), (2.0, 104.0), (3.0, 156.0)] {
        let c = write_json(&dir, "g.json", &json!({ "noise": { "gamma": gamma } }));
        let r = budget_json(&[path_str(&c)]);
        let f = r["noise_at_1mw"]["r1_fibre"].as_f64().unwrap();
        assert!((f - fibre).abs() < 0.1, "gamma {gamma}: {f}");
        assert!(f > last);
        last = f;
    }
    let unity = json!({
        "emitter": { "eta_q": 1.0, "tau_rad_ns": 10.0 },
        "budget": { "eta_wg": 1.0, "eta_grating": 1.0, "eta_det": 1.0 },
    });
    let c = write_json(&dir, "unity.json", &unity);
    let r = budget_json(&[path_str(&c)]);
    assert_eq!(r["photon_efficiency"], 1.0);
    assert!((r["detected_rate"].as_f64().unwrap() - 1.0e8).abs() < 1e-3);

    let c = write_json(&dir, "bad.json", &json!({ "noise": { "gamma": 0.5 } }));
    assert_eq!(nvlink(&["budget", path_str(&c)]).status.code(), Some(2));
}

#[test]
fn trace_reports_whole_bins() {
    let dir = TempDir::new().unwrap();
    let data = simulate(
        &dir,
        &json!({ "seed": 2, "mode": { "cw": { "duration_s": 3.5 } } }),
        "trace",
    );
    let hist = dir.path().join("rates.csv");
    let o = nvlink(&["trace", path_str(&data), "--histogram-out", path_str(&hist)]);
    assert_ok(&o);
    let rows: Vec<String> = stdout(&o)
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect();
    assert_eq!(rows[0], "start_s,counts");
    assert_eq!(rows.len(), 1 + 3);
    let entries: u64 = std::fs::read_to_string(&hist)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(entries, 3);
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_nvlink"))
        .args(["budget"])
        .env("NVLINK_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

fn stream_strategy() -> impl Strategy<Value = TimeTagStream> {
    (1u16..=8, prop::collection::vec((any::<u8>(), 0u64..1 << 50), 0..200)).prop_map(|(n, raw)| {
        let mut tags: Vec<TimeTag> = raw.into_iter().map(|(c, t)| TimeTag::new(c % n as u8, t)).collect();
        tags.sort_by_key(|t| (t.t, t.channel));
        let duration = tags.last().map_or(0, |t| t.t + 1);
        TimeTagStream::new(tags, duration, n).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ttag_round_trip(s in stream_strategy()) {
        let bytes = ttag::encode(&s);
        prop_assert_eq!(bytes.len() as u64, ttag::HEADER_LEN + ttag::RECORD_LEN * s.len() as u64);
        prop_assert_eq!(ttag::read_stream(&bytes[..]).unwrap(), s);
    }

    #[test]
    fn ttag_truncation_is_always_detected(s in stream_strategy(), cut in 1usize..64) {
        let bytes = ttag::encode(&s);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(ttag::read_stream(&bytes[..keep]).is_err());
    }
}
