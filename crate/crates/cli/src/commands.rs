//! Subcommand implementations. Report builders are public so the same
//! numbers can be checked in-process.

use std::io::Write;
use std::path::{Path, PathBuf};

use nvlink_core::correlator::{
    self, analyze_modes, brute_force_correlate, count_rate_histogram, cross_correlate, cross_correlate_sharded,
    intensity_trace, lifetime_histogram, CorrelationHistogram, LagWindow, ModeAnalysis, StreamingCorrelator,
    ORACLE_MAX_TAGS,
};
use nvlink_core::emitter::background_degrade;
use nvlink_core::fitters::{
    correct_background, estimate_emitter_count, fit_biexponential, fit_g2_series, fit_saturation, FitResult,
    ModelParams,
};
use nvlink_core::linkbudget::{
    self, detected_rate, fibre_noise_fraction, noise_rates, spectra, spectral_efficiency, NoiseRates, SpectralCurve,
};
use nvlink_core::montecarlo::{self, rate_ledger, RateLedger, RNG_ALGORITHM};
use nvlink_core::TimeTagStream;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::args::*;
use crate::config::{from_json, RunConfig};
use crate::error::{CliError, Result};
use crate::{tables, ttag};

/// Writes via a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let wrap = |source| CliError::Output {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(wrap)?;
    tmp.write_all(bytes).map_err(wrap)?;
    // Temp files are created owner-only; give the result ordinary permissions.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(0o644))
            .map_err(wrap)?;
    }
    tmp.as_file().sync_all().map_err(wrap)?;
    tmp.persist(path).map_err(|e| wrap(e.error))?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(|source| CliError::Output {
                path: PathBuf::from("<stdout>"),
                source,
            })
        }
    }
}

fn to_json_pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn read_ttag(path: &Path) -> Result<TimeTagStream> {
    ttag::read_file(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
    pub tags: u64,
    pub tags_per_channel: Vec<u64>,
    pub duration_ps: u64,
}

/// Reference numbers from the closed-form budget, for comparison with the ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    /// Saturated detected emission rate of one emitter.
    pub detected_rate: f64,
    /// Background per grating output at the configured pump.
    pub noise: NoiseRates,
    /// Signal fraction per channel from the ledger (before dead time).
    pub snr_per_channel: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub rng_algorithm: String,
    pub seed: u64,
    pub config_sha256: String,
    pub config: RunConfig,
    pub output: OutputRecord,
    pub expected: RateLedger,
    pub budget: BudgetSummary,
    pub warnings: Vec<String>,
}

/// Runs the simulation and returns the encoded TTAG bytes and the manifest.
pub fn run_simulation(cfg: &RunConfig, file_name: &str) -> Result<(Vec<u8>, Manifest)> {
    let sim = cfg.sim_config()?;
    let ledger = rate_ledger(&sim).map_err(|e| CliError::Config(e.to_string()))?;
    let stream = montecarlo::simulate(&sim).map_err(|e| CliError::Config(e.to_string()))?;
    let bytes = ttag::encode(&stream);
    let per_channel = (0..stream.n_channels()).map(|c| stream.count(c as u8) as u64).collect();
    let snr = |c: usize| {
        let ch = &ledger.channels[c];
        if ch.total > 0.0 {
            ch.signal / ch.total
        } else {
            0.0
        }
    };
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        rng_algorithm: RNG_ALGORITHM.to_string(),
        seed: cfg.seed,
        config_sha256: cfg.digest(),
        config: cfg.clone(),
        output: OutputRecord {
            file: file_name.to_string(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
            tags: stream.len() as u64,
            tags_per_channel: per_channel,
            duration_ps: stream.duration_ps(),
        },
        budget: BudgetSummary {
            detected_rate: detected_rate(&sim.budget).map_err(|e| CliError::Config(e.to_string()))?,
            noise: noise_rates(sim.pump_mw, &sim.noise).map_err(|e| CliError::Config(e.to_string()))?,
            snr_per_channel: [snr(0), snr(1)],
        },
        expected: ledger,
        warnings: sim.warnings(),
    };
    Ok((bytes, manifest))
}

fn default_manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let name = args
        .out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (bytes, manifest) = run_simulation(&cfg, &name)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    write_atomic(&args.out, &bytes)?;
    let manifest_path = args
        .manifest
        .clone()
        .unwrap_or_else(|| default_manifest_path(&args.out));
    write_atomic(&manifest_path, to_json_pretty(&manifest).as_bytes())?;
    eprintln!(
        "wrote {} tags to {} (manifest {})",
        manifest.output.tags,
        args.out.display(),
        manifest_path.display()
    );
    Ok(())
}

pub fn repro(args: &ReproArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.manifest)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", args.manifest.display())))?;
    let recorded: Manifest = from_json(&text)?;
    if recorded.rng_algorithm != RNG_ALGORITHM {
        return Err(CliError::Config(format!(
            "manifest was produced with RNG `{}`, this build uses `{RNG_ALGORITHM}`",
            recorded.rng_algorithm
        )));
    }
    if recorded.config.digest() != recorded.config_sha256 {
        return Err(CliError::Config("config does not match its recorded hash".into()));
    }
    let (bytes, replayed) = run_simulation(&recorded.config, &recorded.output.file)?;
    if let Some(out) = &args.out {
        write_atomic(out, &bytes)?;
    }
    if replayed.output != recorded.output {
        return Err(CliError::Data(format!(
            "replay differs: sha256 {} vs recorded {}",
            replayed.output.sha256, recorded.output.sha256
        )));
    }
    eprintln!(
        "reproduced {} ({} tags, sha256 {})",
        recorded.output.file, recorded.output.tags, recorded.output.sha256
    );
    Ok(())
}

fn lag_window(args: &CorrelateArgs) -> LagWindow {
    match (args.lag_min_ps, args.lag_max_ps) {
        (Some(lo), Some(hi)) => LagWindow::new(lo, hi),
        _ => LagWindow::symmetric(args.window_ps),
    }
}

/// Single pass over the file without loading it.
fn correlate_streaming(path: &Path, args: &CorrelateArgs) -> Result<Option<CorrelationHistogram>> {
    let mut reader = ttag::TtagReader::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let header = reader.header();
    let mut corr = StreamingCorrelator::new(args.channel_a, args.channel_b, args.bin_width_ps, lag_window(args))
        .map_err(|e| CliError::Config(e.to_string()))?;
    if header.n_records == 0 {
        // Still validate the rest of the file.
        reader
            .next()
            .transpose()
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        return Ok(None);
    }
    for tag in &mut reader {
        let tag = tag.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        corr.push(tag).map_err(data)?;
    }
    Ok(Some(corr.finish(header.duration_ps)))
}

/// Correlates an in-memory stream; with `verify` every implementation must agree.
pub fn correlate_stream(stream: &TimeTagStream, args: &CorrelateArgs) -> Result<CorrelationHistogram> {
    let window = lag_window(args);
    let (a, b, bw) = (args.channel_a, args.channel_b, args.bin_width_ps);
    let config_err = |e: correlator::CorrelatorError| CliError::Config(e.to_string());
    let h = match args.shards {
        Some(n) if n > 1 => cross_correlate_sharded(stream, a, b, bw, window, n).map_err(config_err)?,
        _ => cross_correlate(stream, a, b, bw, window).map_err(config_err)?,
    };
    if args.verify_oracle {
        if stream.len() > ORACLE_MAX_TAGS {
            return Err(CliError::Data(format!(
                "{} tags exceed the oracle limit of {ORACLE_MAX_TAGS}",
                stream.len()
            )));
        }
        let oracle = brute_force_correlate(stream, a, b, bw, window).map_err(data)?;
        let sequential = cross_correlate(stream, a, b, bw, window).map_err(data)?;
        let sharded = cross_correlate_sharded(stream, a, b, bw, window, 7).map_err(data)?;
        let mut streaming = StreamingCorrelator::new(a, b, bw, window).map_err(data)?;
        for &tag in stream.tags() {
            streaming.push(tag).map_err(data)?;
        }
        let streaming = streaming.finish(stream.duration_ps());
        for (name, other) in [
            ("sequential", &sequential),
            ("sharded", &sharded),
            ("streaming", &streaming),
        ] {
            if other.counts != oracle.counts {
                let bin = other
                    .counts
                    .iter()
                    .zip(&oracle.counts)
                    .position(|(x, y)| x != y)
                    .unwrap_or(0);
                return Err(CliError::Data(format!(
                    "{name} correlation disagrees with the brute-force oracle at lag {} ps",
                    oracle.bin_lower_ps(bin)
                )));
            }
        }
    }
    Ok(h)
}

pub fn correlate(args: &CorrelateArgs) -> Result<()> {
    let hist = if args.verify_oracle || args.shards.is_some_and(|n| n > 1) {
        let stream = read_ttag(&args.input)?;
        if stream.is_empty() {
            None
        } else {
            Some(correlate_stream(&stream, args)?)
        }
    } else {
        correlate_streaming(&args.input, args)?
    };
    let text = match hist {
        Some(h) => tables::correlation_csv(&h),
        None => {
            // Validate the binning even when there is nothing to bin.
            StreamingCorrelator::new(args.channel_a, args.channel_b, args.bin_width_ps, lag_window(args))
                .map_err(|e| CliError::Config(e.to_string()))?;
            format!("{}\n", tables::G2_HEADER)
        }
    };
    emit(args.out.as_deref(), &text)
}

pub fn lifetime(args: &LifetimeArgs) -> Result<()> {
    let stream = read_ttag(&args.input)?;
    let text = if stream.is_empty() {
        format!("{}\n", tables::LIFETIME_HEADER)
    } else {
        let h = lifetime_histogram(
            &stream,
            args.sync_channel,
            args.channel,
            args.bin_width_ps,
            args.range_ps,
        )
        .map_err(|e| match e {
            correlator::CorrelatorError::InvalidBinning(_) => CliError::Config(e.to_string()),
            _ => data(e),
        })?;
        tables::lifetime_csv(&h, args.sync_channel, args.channel)
    };
    emit(args.out.as_deref(), &text)
}

pub fn trace(args: &TraceArgs) -> Result<()> {
    let stream = read_ttag(&args.input)?;
    let trace = intensity_trace(&stream, &args.channels, args.bin_s).map_err(|e| CliError::Config(e.to_string()))?;
    emit(args.out.as_deref(), &tables::trace_csv(&trace))?;
    if trace.counts.is_empty() {
        if let Some(p) = &args.histogram_out {
            write_atomic(p, format!("{}\n", tables::RATE_HISTOGRAM_HEADER).as_bytes())?;
        }
        return Ok(());
    }
    let modes: ModeAnalysis = analyze_modes(&trace);
    if let Some(p) = &args.histogram_out {
        let rates = trace.rates();
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        let bin = args
            .rate_bin
            .unwrap_or_else(|| (mean * args.bin_s).sqrt().max(1.0) / args.bin_s);
        let h = count_rate_histogram(&trace, bin).map_err(|e| CliError::Config(e.to_string()))?;
        write_atomic(p, tables::rate_histogram_csv(&h).as_bytes())?;
    }
    eprintln!(
        "{} bins; modes {:.1} / {:.1} counts per bin, separation {:.1} sigma, bimodal: {}",
        trace.counts.len(),
        modes.low_mean,
        modes.high_mean,
        modes.separation_sigma,
        modes.bimodal
    );
    Ok(())
}

fn fit_value<P: ModelParams + Serialize>(model: &str, fit: &FitResult<P>) -> Value {
    let mut v = serde_json::to_value(fit).expect("fit serializes");
    let obj = v.as_object_mut().expect("fit is an object");
    obj.insert("model".into(), json!(model));
    obj.insert("parameter_names".into(), json!(P::NAMES));
    obj.insert("reduced_chi2".into(), json!(fit.reduced_chi2()));
    v
}

fn fit_err(e: nvlink_core::fitters::FitError) -> CliError {
    CliError::Data(e.to_string())
}

/// Fit report for a CSV document; the flag says whether the fit converged.
pub fn fit_report(text: &str, args: &FitArgs) -> Result<(Value, bool)> {
    match args.model {
        Model::Lifetime => {
            let h = tables::parse_lifetime(text)?;
            let fit = fit_biexponential(&h, args.t0_ns).map_err(fit_err)?;
            Ok((fit_value("lifetime", &fit), fit.converged))
        }
        Model::Saturation => {
            let pts = tables::parse_saturation(text)?;
            let fit = fit_saturation(&pts, args.reduced).map_err(fit_err)?;
            let mut v = fit_value("saturation", &fit);
            v["reduced_model"] = json!(args.reduced);
            Ok((v, fit.converged))
        }
        Model::G2 => {
            let raw = tables::parse_g2(text)?;
            let series = match args.sigma {
                Some(s) => correct_background(&raw, s).map_err(|e| CliError::Config(e.to_string()))?,
                None => raw,
            };
            let fit = fit_g2_series(&series).map_err(fit_err)?;
            let (g0, g0_err) = fit.g2_at_center();
            let mut v = fit_value("g2", &fit);
            v["g2_tau0"] = json!(g0);
            v["g2_tau0_sigma"] = json!(g0_err);
            v["background_sigma"] = json!(args.sigma);
            if let Some(s) = args.sigma {
                v["g2_tau0_raw"] = json!(background_degrade(g0, s).ok());
            }
            v["emitter_count"] = match estimate_emitter_count(g0) {
                Ok((n, residual)) => json!({ "n": n, "residual": residual }),
                Err(_) => Value::Null,
            };
            Ok((v, fit.converged))
        }
    }
}

pub fn fit(args: &FitArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.input)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", args.input.display())))?;
    let (report, converged) = fit_report(&text, args)?;
    emit(args.out.as_deref(), &to_json_pretty(&report))?;
    if converged {
        Ok(())
    } else {
        Err(CliError::NotConverged(format!(
            "{} did not meet the convergence criteria",
            args.input.display()
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    pub grating: f64,
    pub edge: f64,
    pub edge_over_grating: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetReport {
    pub eta_q: f64,
    pub tau_rad_ns: f64,
    pub eta_wg: f64,
    pub eta_grating: f64,
    pub eta_det: f64,
    pub photon_efficiency: f64,
    /// Saturated detected emission rate, counts/s.
    pub detected_rate: f64,
    pub gamma: f64,
    /// Background terms at 1 mW.
    pub noise_at_1mw: NoiseRates,
    pub pump_mw: f64,
    pub noise_at_pump: NoiseRates,
    pub fibre_fraction: Option<f64>,
    pub dark_rate: f64,
    /// `detected_rate / (detected_rate + background at pump + dark)`.
    pub snr: Option<f64>,
    /// Simulator bookkeeping for the same config, when it validates.
    pub ledger: Option<RateLedger>,
    pub spectral_efficiency: SpectralReport,
}

fn load_curve(path: &Option<PathBuf>, fallback: fn() -> SpectralCurve) -> Result<SpectralCurve> {
    match path {
        None => Ok(fallback()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            SpectralCurve::from_csv(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        }
    }
}

pub fn budget_report(cfg: &RunConfig) -> Result<BudgetReport> {
    let cfg_err = |e: linkbudget::BudgetError| CliError::Config(e.to_string());
    let budget = cfg.link_budget();
    let r_det = detected_rate(&budget).map_err(cfg_err)?;
    let noise_1 = noise_rates(1.0, &cfg.noise).map_err(cfg_err)?;
    let noise_p = noise_rates(cfg.pump_mw, &cfg.noise).map_err(cfg_err)?;
    let grating = load_curve(&cfg.spectra.grating_csv, spectra::grating_coupler)?;
    let edge = load_curve(&cfg.spectra.edge_csv, spectra::edge_coupler)?;
    let emission = load_curve(&cfg.spectra.emission_csv, spectra::nv_emission)?;
    let eg = spectral_efficiency(&grating, &emission).map_err(data)?;
    let ee = spectral_efficiency(&edge, &emission).map_err(data)?;
    Ok(BudgetReport {
        eta_q: budget.eta_q,
        tau_rad_ns: budget.resolved_tau_rad_ns(),
        eta_wg: budget.eta_wg,
        eta_grating: budget.eta_grating,
        eta_det: budget.eta_det,
        photon_efficiency: budget.photon_efficiency(),
        detected_rate: r_det,
        gamma: cfg.noise.gamma,
        noise_at_1mw: noise_1,
        pump_mw: cfg.pump_mw,
        noise_at_pump: noise_p,
        fibre_fraction: fibre_noise_fraction(&noise_1).ok(),
        dark_rate: cfg.noise.dark_rate,
        snr: linkbudget::snr(r_det, noise_p.total() + cfg.noise.dark_rate).ok(),
        ledger: cfg.sim_config().ok().and_then(|s| rate_ledger(&s).ok()),
        spectral_efficiency: SpectralReport {
            grating: eg,
            edge: ee,
            edge_over_grating: if eg > 0.0 { ee / eg } else { f64::NAN },
        },
    })
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.digits$}"))
}

pub fn budget_table(r: &BudgetReport) -> String {
    let mut s = String::new();
    let mut row = |k: &str, v: String| s.push_str(&format!("{k:<34}{v}\n"));
    row("eta_q", format!("{}", r.eta_q));
    row("tau_rad (ns)", format!("{}", r.tau_rad_ns));
    row("eta_wg", format!("{}", r.eta_wg));
    row("eta_grating", format!("{}", r.eta_grating));
    row("eta_det", format!("{}", r.eta_det));
    row("detected rate R_det (counts/s)", format!("{:.1}", r.detected_rate));
    row("gamma", format!("{}", r.gamma));
    let n = &r.noise_at_1mw;
    row(
        "noise @ 1 mW (R1_SiN, R2_SiN, fibre)",
        format!("({:.2}, {:.2}, {:.2})", n.r1_sin, n.r2_sin, n.r1_fibre),
    );
    let n = &r.noise_at_pump;
    row(
        &format!("noise @ {} mW", r.pump_mw),
        format!("({:.2}, {:.2}, {:.2})", n.r1_sin, n.r2_sin, n.r1_fibre),
    );
    row("fibre fraction", opt(r.fibre_fraction, 4));
    row("dark rate (counts/s)", format!("{}", r.dark_rate));
    row("SNR S/(S+N) at pump", opt(r.snr, 4));
    if let Some(l) = &r.ledger {
        for (c, ch) in l.channels.iter().enumerate() {
            row(
                &format!("channel {c} signal/bg/dark"),
                format!(
                    "{:.1} / {:.1} / {:.1} (observed {:.1})",
                    ch.signal, ch.background, ch.dark, ch.observed
                ),
            );
        }
    }
    let e = &r.spectral_efficiency;
    row("grating spectral efficiency", format!("{:.4}", e.grating));
    row("edge spectral efficiency", format!("{:.4}", e.edge));
    row("edge / grating", format!("{:.1}", e.edge_over_grating));
    s
}

pub fn budget(args: &BudgetArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = args.pump_mw {
        cfg.pump_mw = p;
    }
    let report = budget_report(&cfg)?;
    let json = to_json_pretty(&report);
    if let Some(p) = &args.out {
        write_atomic(p, json.as_bytes())?;
    }
    emit(None, &if args.json { json } else { budget_table(&report) })
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Correlate(a) => correlate(a),
        Command::Lifetime(a) => lifetime(a),
        Command::Trace(a) => trace(a),
        Command::Fit(a) => fit(a),
        Command::Budget(a) => budget(a),
        Command::Repro(a) => repro(a),
    }
}
