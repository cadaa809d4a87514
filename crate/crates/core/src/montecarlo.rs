//! Stochastic generation of detection time-tag streams.
//!
//! Every emitter decay returns the system to the ground state, so the
//! detected-photon process of one emitter is a renewal process. Instead of
//! stepping through every excitation cycle (≈10⁸ s⁻¹ against ≈10³ s⁻¹
//! detections) the sampler draws, per detected photon:
//!
//! * the number of excited-state visits `N` until a visit ends in a detected
//!   decay (geometric),
//! * how many of the `N − 1` failed visits went through the shelving state
//!   (binomial),
//! * the elapsed time as a sum of Gamma variates: `N` ground dwells, `N`
//!   excited dwells and `N_s` shelving dwells.
//!
//! This is exact in distribution for the three-state jump process thinned by
//! the efficiency chain. Background and dark counts are independent Poisson
//! processes; jitter, then dead time, are applied per detector.
//!
//! Randomness comes from [`RNG_ALGORITHM`]: one ChaCha20 stream per source,
//! so adding an emitter does not perturb the background draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution, Exp1, Gamma, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::emitter::{self, EmitterError, EmitterParams};
use crate::linkbudget::{self, BudgetError, LinkBudget, NoiseBudget};
use crate::stream::{TimeTag, TimeTagStream, CHANNEL_A, CHANNEL_B, CHANNEL_SYNC};

/// Part of the reproducibility contract: changing any of this changes the output bits.
pub const RNG_ALGORITHM: &str =
    "ChaCha20Rng (rand_chacha 0.9) seeded with SeedableRng::seed_from_u64; stream 1+i per emitter, 1000+ch per background channel, 2000+ch per detector jitter";

const PS_PER_S: f64 = 1.0e12;

const STREAM_EMITTER: u64 = 1;
const STREAM_BACKGROUND: u64 = 1000;
const STREAM_JITTER: u64 = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Emitter(#[from] EmitterError),
    #[error(transparent)]
    Budget(#[from] BudgetError),
    #[error("expected {expected:.3e} tags exceeds the cap of {cap} (raise max_tags or shorten the run)")]
    TooManyTags { expected: f64, cap: u64 },
    #[error("operation needs {0} excitation")]
    WrongMode(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ExcitationMode {
    Cw {
        duration_s: f64,
    },
    Pulsed {
        pulse_count: u64,
        #[serde(default = "default_rep_period")]
        rep_period_ns: f64,
        /// Probability that a pulse leaves a bright emitter excited.
        excitation_probability: f64,
        /// Decay constant of background fluorescence after each pulse.
        #[serde(default = "default_tau_bg")]
        tau_bg_ns: f64,
    },
}

fn default_rep_period() -> f64 {
    1000.0
}

fn default_tau_bg() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    /// Extra per-channel efficiency on top of the link budget.
    pub efficiency: f64,
    pub dark_rate: f64,
    pub dead_time_ns: f64,
    pub jitter_sigma_ps: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            efficiency: 1.0,
            dark_rate: linkbudget::DEFAULT_DARK_RATE,
            dead_time_ns: 22.0,
            jitter_sigma_ps: 350.0,
        }
    }
}

impl DetectorParams {
    /// A perfect detector: unit efficiency, no dark counts, no dead time, no jitter.
    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            dark_rate: 0.0,
            dead_time_ns: 0.0,
            jitter_sigma_ps: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub mode: ExcitationMode,
    pub pump_mw: f64,
    pub emitter: EmitterParams,
    pub budget: LinkBudget,
    pub noise: NoiseBudget,
    /// Probability that a guided photon leaves through output A.
    pub split_ratio: f64,
    /// Delay inserted on channel B (ns).
    pub delay_b_ns: f64,
    pub detectors: [DetectorParams; 2],
    pub rng_seed: u64,
    pub max_tags: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            mode: ExcitationMode::Cw { duration_s: 1.0 },
            pump_mw: 6.0,
            emitter: EmitterParams::default(),
            budget: LinkBudget::default(),
            noise: NoiseBudget::default(),
            split_ratio: 0.5,
            delay_b_ns: 48.0,
            detectors: [DetectorParams::default(), DetectorParams::default()],
            rng_seed: 0,
            max_tags: 100_000_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        self.emitter.validate()?;
        self.budget.validate()?;
        self.noise.validate()?;
        if !(self.pump_mw >= 0.0 && self.pump_mw.is_finite()) {
            return bad(format!("pump_mw = {} must be non-negative", self.pump_mw));
        }
        if !(0.0..=1.0).contains(&self.split_ratio) {
            return bad(format!("split_ratio = {} is outside [0, 1]", self.split_ratio));
        }
        if !(self.delay_b_ns >= 0.0 && self.delay_b_ns.is_finite()) {
            return bad("delay_b_ns must be non-negative".into());
        }
        for (i, d) in self.detectors.iter().enumerate() {
            if !(0.0..=1.0).contains(&d.efficiency) {
                return bad(format!("detectors[{i}].efficiency is outside [0, 1]"));
            }
            if !(d.dark_rate >= 0.0 && d.dark_rate.is_finite()) {
                return bad(format!("detectors[{i}].dark_rate must be non-negative"));
            }
            if !(d.dead_time_ns >= 0.0 && d.dead_time_ns.is_finite()) {
                return bad(format!("detectors[{i}].dead_time_ns must be non-negative"));
            }
            if !(d.jitter_sigma_ps >= 0.0 && d.jitter_sigma_ps.is_finite()) {
                return bad(format!("detectors[{i}].jitter_sigma_ps must be non-negative"));
            }
        }
        match self.mode {
            ExcitationMode::Cw { duration_s } => {
                if !(duration_s >= 0.0 && duration_s.is_finite()) {
                    return bad(format!("duration_s = {duration_s} must be non-negative"));
                }
                if duration_s * PS_PER_S > u64::MAX as f64 / 2.0 {
                    return bad("duration_s is too long for 64-bit picosecond timestamps".into());
                }
            }
            ExcitationMode::Pulsed {
                rep_period_ns,
                excitation_probability,
                tau_bg_ns,
                pulse_count,
            } => {
                if !(rep_period_ns > 0.0 && rep_period_ns.is_finite()) {
                    return bad("rep_period_ns must be positive".into());
                }
                if !(0.0..=1.0).contains(&excitation_probability) {
                    return bad("excitation_probability is outside [0, 1]".into());
                }
                if !(tau_bg_ns > 0.0) {
                    return bad("tau_bg_ns must be positive".into());
                }
                if pulse_count as f64 * rep_period_ns * 1e3 > u64::MAX as f64 / 2.0 {
                    return bad("pulse train is too long for 64-bit picosecond timestamps".into());
                }
            }
        }
        let tau_budget = self.budget.resolved_tau_rad_ns();
        if (tau_budget - self.emitter.tau_rad_ns).abs() > 1e-9 * tau_budget {
            return bad(format!(
                "budget tau_rad ({tau_budget} ns) disagrees with emitter tau_rad_ns ({} ns)",
                self.emitter.tau_rad_ns
            ));
        }
        if (self.budget.eta_q - self.emitter.eta_q).abs() > 1e-12 {
            return bad(format!(
                "budget eta_q ({}) disagrees with emitter eta_q ({})",
                self.budget.eta_q, self.emitter.eta_q
            ));
        }
        Ok(())
    }

    /// Non-fatal problems worth reporting to the user.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if let ExcitationMode::Pulsed { rep_period_ns, .. } = self.mode {
            if rep_period_ns < 5.0 * self.emitter.tau_rad_ns {
                w.push(format!(
                    "rep_period_ns = {rep_period_ns} is under 5 radiative lifetimes; decays will spill into the next period"
                ));
            }
        }
        w
    }

    pub fn duration_ps(&self) -> u64 {
        match self.mode {
            ExcitationMode::Cw { duration_s } => (duration_s * PS_PER_S).round() as u64,
            ExcitationMode::Pulsed {
                pulse_count,
                rep_period_ns,
                ..
            } => pulse_count * rep_period_ps(rep_period_ns),
        }
    }

    fn channel_weights(&self) -> [f64; 2] {
        [
            self.split_ratio * self.detectors[0].efficiency,
            (1.0 - self.split_ratio) * self.detectors[1].efficiency,
        ]
    }

    /// Probability that a radiative decay is detected on either channel.
    fn detection_probability(&self) -> f64 {
        let w = self.channel_weights();
        self.budget.photon_efficiency() * (w[0] + w[1])
    }
}

fn rep_period_ps(rep_period_ns: f64) -> u64 {
    (rep_period_ns * 1e3).round().max(1.0) as u64
}

/// Analytic expectation for one detector channel, counts/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRates {
    pub signal: f64,
    pub background: f64,
    pub dark: f64,
    /// Sum of the three, before dead time.
    pub total: f64,
    /// `total / (1 + total·dead_time)`.
    pub observed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateLedger {
    pub channels: [ChannelRates; 2],
    /// Sync rate (pulsed mode), counts/s.
    pub sync: f64,
    /// Expected number of tags in the whole stream.
    pub expected_tags: f64,
}

/// Closed-form per-channel rate bookkeeping for a configuration.
pub fn rate_ledger(config: &SimConfig) -> Result<RateLedger, SimError> {
    config.validate()?;
    let em = &config.emitter;
    let n = em.n_emitters as f64;
    let weights = config.channel_weights();
    let chain = config.budget.photon_efficiency();
    let noise = linkbudget::noise_rates(config.pump_mw, &config.noise)?.total();

    let (per_emitter_decays, sync, duration_s) = match config.mode {
        ExcitationMode::Cw { duration_s } => {
            let decays =
                emitter::steady_state_decay_rate(em, config.pump_mw)? * emitter::bright_fraction(em, config.pump_mw);
            (decays, 0.0, duration_s)
        }
        ExcitationMode::Pulsed {
            pulse_count,
            rep_period_ns,
            excitation_probability,
            ..
        } => {
            let period_s = rep_period_ps(rep_period_ns) as f64 / PS_PER_S;
            let radiative = em.k_rad() / (em.k_rad() + em.k_es);
            let decays = excitation_probability * radiative * emitter::bright_fraction(em, config.pump_mw) / period_s;
            (decays, 1.0 / period_s, pulse_count as f64 * period_s)
        }
    };

    let mut channels = [ChannelRates {
        signal: 0.0,
        background: 0.0,
        dark: 0.0,
        total: 0.0,
        observed: 0.0,
    }; 2];
    for (c, ch) in channels.iter_mut().enumerate() {
        let det = &config.detectors[c];
        ch.signal = n * per_emitter_decays * chain * weights[c];
        ch.background = noise * det.efficiency;
        ch.dark = det.dark_rate;
        ch.total = ch.signal + ch.background + ch.dark;
        ch.observed = ch.total / (1.0 + ch.total * det.dead_time_ns * 1e-9);
    }
    let expected_tags = (channels[0].total + channels[1].total + sync) * duration_s;
    Ok(RateLedger {
        channels,
        sync,
        expected_tags,
    })
}

fn source_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[inline]
fn exp_sample<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    let e: f64 = rng.sample(Exp1);
    e / rate
}

/// Draws waiting times (s) between detected photons of one bright emitter.
#[derive(Debug, Clone)]
struct DetectedCycleSampler {
    k_exc: f64,
    k_leave_e: f64,
    k_sg: f64,
    /// Per excited-state visit: detected decay.
    p_hit: f64,
    /// Among failed visits: fraction that went through the shelving state.
    p_shelve_given_miss: f64,
    visits: Option<Geometric>,
}

impl DetectedCycleSampler {
    fn new(em: &EmitterParams, k_exc: f64, p_detect: f64) -> Self {
        let k_r = em.k_rad();
        let k_leave_e = k_r + em.k_es;
        let p_hit = p_detect * k_r / k_leave_e;
        let p_miss_decay = (1.0 - p_detect) * k_r / k_leave_e;
        let p_shelve = em.k_es / k_leave_e;
        let miss = p_miss_decay + p_shelve;
        let visits = if p_hit > 0.0 && k_exc > 0.0 {
            Geometric::new(p_hit).ok()
        } else {
            None
        };
        Self {
            k_exc,
            k_leave_e,
            k_sg: em.k_sg,
            p_hit,
            p_shelve_given_miss: if miss > 0.0 { p_shelve / miss } else { 0.0 },
            visits,
        }
    }

    /// `None` when the emitter will never produce another detection.
    fn sample<R: Rng>(&self, rng: &mut R) -> Option<f64> {
        let visits = self.visits.as_ref()?;
        debug_assert!(self.p_hit > 0.0);
        let failures = visits.sample(rng);
        let n = failures + 1;
        let shelved = if failures > 0 && self.p_shelve_given_miss > 0.0 {
            Binomial::new(failures, self.p_shelve_given_miss)
                .expect("valid binomial")
                .sample(rng)
        } else {
            0
        };
        let mut t = gamma_sum(rng, n, self.k_exc) + gamma_sum(rng, n, self.k_leave_e);
        if shelved > 0 {
            if self.k_sg <= 0.0 {
                return None;
            }
            t += gamma_sum(rng, shelved, self.k_sg);
        }
        Some(t)
    }
}

/// Sum of `n` independent exponentials with the given rate.
fn gamma_sum<R: Rng>(rng: &mut R, n: u64, rate: f64) -> f64 {
    match n {
        0 => 0.0,
        1 => exp_sample(rng, rate),
        _ => Gamma::new(n as f64, 1.0 / rate)
            .expect("positive shape and scale")
            .sample(rng),
    }
}

/// Bright/dark telegraph process, times in ps.
struct Telegraph {
    rates: Option<(f64, f64)>,
    bright: bool,
    next_switch: f64,
}

impl Telegraph {
    fn new<R: Rng>(rates: Option<(f64, f64)>, rng: &mut R) -> Self {
        match rates {
            None => Self {
                rates,
                bright: true,
                next_switch: f64::INFINITY,
            },
            Some((off, on)) => {
                let bright = rng.random::<f64>() < on / (on + off);
                let rate = if bright { off } else { on };
                Self {
                    rates,
                    bright,
                    next_switch: exp_sample(rng, rate) * PS_PER_S,
                }
            }
        }
    }

    fn toggle<R: Rng>(&mut self, rng: &mut R) {
        let (off, on) = self.rates.expect("toggle needs blinking");
        self.bright = !self.bright;
        let rate = if self.bright { off } else { on };
        self.next_switch += exp_sample(rng, rate) * PS_PER_S;
    }

    fn advance_to<R: Rng>(&mut self, t_ps: f64, rng: &mut R) -> bool {
        while self.next_switch <= t_ps {
            self.toggle(rng);
        }
        self.bright
    }
}

fn pick_channel<R: Rng>(rng: &mut R, p_a: f64) -> usize {
    if rng.random::<f64>() < p_a {
        0
    } else {
        1
    }
}

fn check_cap(config: &SimConfig) -> Result<RateLedger, SimError> {
    let ledger = rate_ledger(config)?;
    if ledger.expected_tags > config.max_tags as f64 {
        return Err(SimError::TooManyTags {
            expected: ledger.expected_tags,
            cap: config.max_tags,
        });
    }
    Ok(ledger)
}

/// Generates a tag stream for either excitation mode.
pub fn simulate(config: &SimConfig) -> Result<TimeTagStream, SimError> {
    match config.mode {
        ExcitationMode::Cw { .. } => simulate_cw(config),
        ExcitationMode::Pulsed { .. } => simulate_pulsed(config),
    }
}

fn simulate_cw(config: &SimConfig) -> Result<TimeTagStream, SimError> {
    let ledger = check_cap(config)?;
    let end_ps = config.duration_ps() as f64;
    let em = &config.emitter;
    let weights = config.channel_weights();
    let p_det = config.detection_probability();
    let p_a = if weights[0] + weights[1] > 0.0 {
        weights[0] / (weights[0] + weights[1])
    } else {
        0.5
    };
    let k_exc = emitter::excitation_rate(config.pump_mw, em)?;
    let sampler = DetectedCycleSampler::new(em, k_exc, p_det);
    let blink = emitter::blink_rates(em, config.pump_mw);

    let mut channels: [Vec<f64>; 2] = [
        Vec::with_capacity(ledger.channels[0].total as usize),
        Vec::with_capacity(ledger.channels[1].total as usize),
    ];

    for i in 0..em.n_emitters as u64 {
        let mut rng = source_rng(config.rng_seed, STREAM_EMITTER + i);
        let mut telegraph = Telegraph::new(blink, &mut rng);
        let mut t = 0.0f64;
        loop {
            if !telegraph.bright {
                t = telegraph.next_switch;
                if t >= end_ps {
                    break;
                }
                telegraph.toggle(&mut rng);
                continue;
            }
            // A bright period restarts from the ground state.
            match sampler.sample(&mut rng) {
                None => {
                    if !telegraph.next_switch.is_finite() {
                        break;
                    }
                    t = telegraph.next_switch;
                    telegraph.toggle(&mut rng);
                }
                Some(dt_s) => {
                    let te = t + dt_s * PS_PER_S;
                    if te >= telegraph.next_switch {
                        t = telegraph.next_switch;
                        telegraph.toggle(&mut rng);
                        continue;
                    }
                    if te >= end_ps {
                        break;
                    }
                    t = te;
                    let c = pick_channel(&mut rng, p_a);
                    channels[c].push(t);
                }
            }
        }
    }

    let noise = linkbudget::noise_rates(config.pump_mw, &config.noise)?.total();
    for (c, out) in channels.iter_mut().enumerate() {
        let det = &config.detectors[c];
        let rate = noise * det.efficiency + det.dark_rate;
        let mut rng = source_rng(config.rng_seed, STREAM_BACKGROUND + c as u64);
        poisson_times(&mut rng, rate, end_ps, out);
    }

    Ok(finish(config, channels, Vec::new()))
}

fn poisson_times<R: Rng>(rng: &mut R, rate_hz: f64, end_ps: f64, out: &mut Vec<f64>) {
    if rate_hz <= 0.0 {
        return;
    }
    let mut t = 0.0;
    loop {
        t += exp_sample(rng, rate_hz) * PS_PER_S;
        if t >= end_ps {
            break;
        }
        out.push(t);
    }
}

/// Pulsed excitation with a sync tag per pulse on [`CHANNEL_SYNC`].
pub fn simulate_pulsed(config: &SimConfig) -> Result<TimeTagStream, SimError> {
    let ExcitationMode::Pulsed {
        pulse_count,
        rep_period_ns,
        excitation_probability,
        tau_bg_ns,
    } = config.mode
    else {
        return Err(SimError::WrongMode("pulsed"));
    };
    check_cap(config)?;
    let period = rep_period_ps(rep_period_ns);
    let end_ps = (pulse_count * period) as f64;
    let em = &config.emitter;
    let weights = config.channel_weights();
    let p_a = if weights[0] + weights[1] > 0.0 {
        weights[0] / (weights[0] + weights[1])
    } else {
        0.5
    };
    let k_total = em.k_rad() + em.k_es;
    let q = excitation_probability * (em.k_rad() / k_total) * config.detection_probability();
    let blink = emitter::blink_rates(em, config.pump_mw);

    let mut channels: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    if q > 0.0 && pulse_count > 0 {
        let skip = Geometric::new(q).map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        for i in 0..em.n_emitters as u64 {
            let mut rng = source_rng(config.rng_seed, STREAM_EMITTER + i);
            let mut telegraph = Telegraph::new(blink, &mut rng);
            let mut pulse: u64 = 0;
            loop {
                let gap = skip.sample(&mut rng);
                pulse = match pulse.checked_add(gap) {
                    Some(p) if p < pulse_count => p,
                    _ => break,
                };
                let t_pulse = (pulse * period) as f64;
                // Emission delay follows the radiative lifetime.
                let delay = exp_sample(&mut rng, em.k_rad()) * PS_PER_S;
                let c = pick_channel(&mut rng, p_a);
                if telegraph.advance_to(t_pulse, &mut rng) {
                    channels[c].push(t_pulse + delay);
                }
                pulse += 1;
            }
        }
    }

    let noise = linkbudget::noise_rates(config.pump_mw, &config.noise)?.total();
    let tau_bg_ps = tau_bg_ns * 1e3;
    for (c, out) in channels.iter_mut().enumerate() {
        let det = &config.detectors[c];
        let mut rng = source_rng(config.rng_seed, STREAM_BACKGROUND + c as u64);
        // Fluorescence: Poisson in pulse slots, decaying after its pulse.
        let mut fluor = Vec::new();
        poisson_times(&mut rng, noise * det.efficiency, end_ps, &mut fluor);
        for u in fluor {
            let slot = (u / period as f64).floor();
            out.push(slot * period as f64 + exp_sample(&mut rng, 1.0) * tau_bg_ps);
        }
        poisson_times(&mut rng, det.dark_rate, end_ps, out);
    }

    let sync: Vec<TimeTag> = (0..pulse_count)
        .map(|k| TimeTag::new(CHANNEL_SYNC, k * period))
        .collect();
    Ok(finish(config, channels, sync))
}

/// Delay line, jitter, dead time, then a sorted merge with any sync tags.
fn finish(config: &SimConfig, channels: [Vec<f64>; 2], sync: Vec<TimeTag>) -> TimeTagStream {
    let end = config.duration_ps();
    let delay_b = config.delay_b_ns * 1e3;
    let mut tags = sync;
    for (c, mut times) in channels.into_iter().enumerate() {
        let det = &config.detectors[c];
        if c == CHANNEL_B as usize && delay_b > 0.0 {
            times.iter_mut().for_each(|t| *t += delay_b);
        }
        times.sort_by(f64::total_cmp);
        if det.jitter_sigma_ps > 0.0 {
            let mut rng = source_rng(config.rng_seed, STREAM_JITTER + c as u64);
            for t in times.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *t += z * det.jitter_sigma_ps;
            }
        }
        let mut ps: Vec<u64> = times
            .into_iter()
            .filter(|t| *t >= 0.0)
            .map(|t| t.round() as u64)
            .filter(|&t| t < end)
            .collect();
        ps.sort_unstable();
        let dead = (det.dead_time_ns * 1e3).round() as u64;
        let mut last: Option<u64> = None;
        let channel = if c == 0 { CHANNEL_A } else { CHANNEL_B };
        for t in ps {
            if let Some(l) = last {
                if t - l < dead {
                    continue;
                }
            }
            last = Some(t);
            tags.push(TimeTag::new(channel, t));
        }
    }
    tags.sort_unstable_by_key(TimeTag::key);
    let n_channels = if matches!(config.mode, ExcitationMode::Pulsed { .. }) {
        3
    } else {
        2
    };
    TimeTagStream::new(tags, end, n_channels).expect("tags were sorted")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ideal_two_level(duration_s: f64) -> SimConfig {
        let emitter = EmitterParams {
            tau_rad_ns: 10.0,
            k_es: 0.0,
            k_sg: 0.0,
            eta_q: 1.0,
            blink_off_rate: 0.0,
            blink_on_rate: 0.0,
            p_sat_mw: 1.0,
            ..EmitterParams::default()
        };
        SimConfig {
            mode: ExcitationMode::Cw { duration_s },
            pump_mw: 1.0,
            emitter,
            budget: LinkBudget {
                eta_q: 1.0,
                tau_rad_ns: Some(10.0),
                eta_wg: 1.0,
                eta_grating: 1.0,
                eta_det: 1.0,
                ..LinkBudget::default()
            },
            noise: NoiseBudget {
                fibre_rate_eta_det: 0.0,
                alpha1_sin: 0.0,
                alpha2_sin: 0.0,
                ..NoiseBudget::default()
            },
            delay_b_ns: 0.0,
            detectors: [DetectorParams::ideal(), DetectorParams::ideal()],
            ..SimConfig::default()
        }
    }

    #[test]
    fn zero_duration_is_empty() {
        let s = simulate(&ideal_two_level(0.0)).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.duration_ps(), 0);
    }

    #[test]
    fn cap_rejects_huge_runs() {
        let mut c = ideal_two_level(10.0);
        c.max_tags = 1000;
        assert!(matches!(simulate(&c), Err(SimError::TooManyTags { .. })));
    }

    #[test]
    fn mismatched_lifetimes_rejected() {
        let mut c = ideal_two_level(1.0);
        c.budget.tau_rad_ns = Some(12.0);
        assert!(matches!(c.validate(), Err(SimError::InvalidConfig(_))));
    }

    #[test]
    fn sampler_mean_interval_two_level() {
        let c = ideal_two_level(1.0);
        let k_exc = emitter::excitation_rate(1.0, &c.emitter).unwrap();
        let s = DetectedCycleSampler::new(&c.emitter, k_exc, 1.0);
        let mut rng = source_rng(7, 1);
        let n = 200_000;
        let mean = (0..n).map(|_| s.sample(&mut rng).unwrap()).sum::<f64>() / n as f64;
        let expected = 1.0 / k_exc + 10e-9;
        assert!((mean / expected - 1.0).abs() < 0.01);
    }

    #[test]
    fn sampler_thinning_scales_mean() {
        // With detection probability p the mean interval is (1/p)× the cycle mean.
        let em = EmitterParams {
            k_es: 3.0e6,
            k_sg: 4.0e6,
            ..EmitterParams::default()
        };
        let k_exc = 5.0e7;
        let s = DetectedCycleSampler::new(&em, k_exc, 1e-3);
        let mut rng = source_rng(11, 1);
        let n = 100_000;
        let mean = (0..n).map(|_| s.sample(&mut rng).unwrap()).sum::<f64>() / n as f64;
        let decay_rate = {
            let (_, e, _) = emitter::steady_state_populations(&em, k_exc);
            e * em.k_rad()
        };
        let expected = 1.0 / (decay_rate * 1e-3);
        assert!((mean / expected - 1.0).abs() < 0.01, "{mean} vs {expected}");
    }

    #[test]
    fn no_pump_no_emitter_photons() {
        let mut c = ideal_two_level(0.01);
        c.pump_mw = 0.0;
        assert!(simulate(&c).unwrap().is_empty());
    }

    #[test]
    fn pulsed_without_pulses_is_empty() {
        let mut c = ideal_two_level(0.0);
        c.mode = ExcitationMode::Pulsed {
            pulse_count: 0,
            rep_period_ns: 1000.0,
            excitation_probability: 1.0,
            tau_bg_ns: 2.0,
        };
        assert!(simulate_pulsed(&c).unwrap().is_empty());
        let cw = ideal_two_level(1.0);
        assert_eq!(simulate_pulsed(&cw), Err(SimError::WrongMode("pulsed")));
    }

    #[test]
    fn short_period_warns() {
        let mut c = ideal_two_level(0.0);
        c.mode = ExcitationMode::Pulsed {
            pulse_count: 1,
            rep_period_ns: 20.0,
            excitation_probability: 1.0,
            tau_bg_ns: 2.0,
        };
        assert_eq!(c.warnings().len(), 1);
    }
}
