//! Coincidence and occupancy histograms over time-tag streams.
//!
//! Cross-correlation is a full pair correlation: every `(a, b)` pair with
//! `t_b − t_a` inside the lag window is counted, not just the nearest stop.
//! Lag bins are half-open `[lower, upper)` starting at `lag_min`, which must
//! itself be a bin boundary so that lag 0 always starts a bin.
//!
//! Three implementations share the same binning and must agree bit for bit:
//! the sequential two-pointer sweep ([`cross_correlate`]), a rayon-sharded
//! version of the same sweep ([`cross_correlate_sharded`]) and a push-based
//! [`StreamingCorrelator`] for out-of-core input. [`brute_force_correlate`]
//! is the quadratic reference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stream::{TimeTag, TimeTagStream};

/// Largest stream the quadratic oracle accepts.
pub const ORACLE_MAX_TAGS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorrelatorError {
    #[error("invalid binning: {0}")]
    InvalidBinning(String),
    #[error("no sync tags on channel {0}")]
    NoSyncTags(u8),
    #[error("oracle refuses {0} tags (limit {ORACLE_MAX_TAGS})")]
    OracleTooLarge(usize),
    #[error("tag at {t} ps arrived after a tag at {last} ps")]
    OutOfOrder { t: u64, last: u64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Lag range `[min_ps, max_ps)` of a correlation, in picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagWindow {
    pub min_ps: i64,
    pub max_ps: i64,
}

impl LagWindow {
    pub fn new(min_ps: i64, max_ps: i64) -> Self {
        Self { min_ps, max_ps }
    }

    /// `[-half, +half)`.
    pub fn symmetric(half_ps: i64) -> Self {
        Self::new(-half_ps, half_ps)
    }

    /// Largest `|t_b − t_a|` that can fall inside the window.
    fn reach(&self) -> i64 {
        self.max_ps.max(-self.min_ps).max(0)
    }

    fn n_bins(&self, bin_width_ps: u64) -> Result<usize, CorrelatorError> {
        if bin_width_ps == 0 || bin_width_ps > i64::MAX as u64 {
            return Err(CorrelatorError::InvalidBinning("bin width must be positive".into()));
        }
        let bw = bin_width_ps as i64;
        if self.max_ps <= self.min_ps {
            return Err(CorrelatorError::InvalidBinning(format!(
                "lag window [{}, {}) is empty",
                self.min_ps, self.max_ps
            )));
        }
        let span = self
            .max_ps
            .checked_sub(self.min_ps)
            .ok_or_else(|| CorrelatorError::InvalidBinning("lag window too wide".into()))?;
        if span % bw != 0 {
            return Err(CorrelatorError::InvalidBinning(format!(
                "window width {span} ps is not a multiple of the {bw} ps bin"
            )));
        }
        if self.min_ps % bw != 0 {
            return Err(CorrelatorError::InvalidBinning(format!(
                "lag_min {} ps is not a multiple of the {bw} ps bin",
                self.min_ps
            )));
        }
        Ok((span / bw) as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    pub bin_width_ps: u64,
    pub lag_min_ps: i64,
    pub lag_max_ps: i64,
    pub counts: Vec<u64>,
    pub acquisition_time_s: f64,
    pub rate_a: f64,
    pub rate_b: f64,
}

impl CorrelationHistogram {
    fn zeroed(bin_width_ps: u64, window: LagWindow, n_bins: usize) -> Self {
        Self {
            bin_width_ps,
            lag_min_ps: window.min_ps,
            lag_max_ps: window.max_ps,
            counts: vec![0; n_bins],
            acquisition_time_s: 0.0,
            rate_a: 0.0,
            rate_b: 0.0,
        }
    }

    fn with_rates(mut self, n_a: usize, n_b: usize, duration_s: f64) -> Self {
        self.acquisition_time_s = duration_s;
        if duration_s > 0.0 {
            self.rate_a = n_a as f64 / duration_s;
            self.rate_b = n_b as f64 / duration_s;
        }
        self
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_lower_ps(&self, i: usize) -> i64 {
        self.lag_min_ps + i as i64 * self.bin_width_ps as i64
    }

    pub fn bin_centre_ps(&self, i: usize) -> f64 {
        self.bin_lower_ps(i) as f64 + 0.5 * self.bin_width_ps as f64
    }

    pub fn total_pairs(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Expected counts per bin for uncorrelated streams, `None` when a rate
    /// or the acquisition time is zero.
    pub fn normalization(&self) -> Option<f64> {
        let n = self.rate_a * self.rate_b * self.acquisition_time_s * self.bin_width_ps as f64 * 1e-12;
        (n > 0.0 && n.is_finite()).then_some(n)
    }

    pub fn is_normalized(&self) -> bool {
        self.normalization().is_some()
    }

    pub fn g2(&self, i: usize) -> Option<f64> {
        self.normalization().map(|n| self.counts[i] as f64 / n)
    }

    pub fn normalized(&self) -> Option<Vec<f64>> {
        let n = self.normalization()?;
        Some(self.counts.iter().map(|&c| c as f64 / n).collect())
    }

    /// The histogram seen with the channels swapped: lags negate.
    pub fn mirrored(&self) -> Self {
        let mut counts = self.counts.clone();
        counts.reverse();
        Self {
            bin_width_ps: self.bin_width_ps,
            lag_min_ps: -self.lag_max_ps,
            lag_max_ps: -self.lag_min_ps,
            counts,
            acquisition_time_s: self.acquisition_time_s,
            rate_a: self.rate_b,
            rate_b: self.rate_a,
        }
    }

    /// Merges `factor` adjacent bins.
    pub fn coarsened(&self, factor: usize) -> Result<Self, CorrelatorError> {
        if factor == 0 || self.counts.len() % factor != 0 {
            return Err(CorrelatorError::InvalidBinning(format!(
                "{} bins cannot be grouped by {factor}",
                self.counts.len()
            )));
        }
        let bw = self.bin_width_ps * factor as u64;
        if self.lag_min_ps % bw as i64 != 0 {
            return Err(CorrelatorError::InvalidBinning(
                "coarse bins would not start at lag_min".into(),
            ));
        }
        Ok(Self {
            bin_width_ps: bw,
            counts: self.counts.chunks(factor).map(|c| c.iter().sum()).collect(),
            ..self.clone()
        })
    }

    /// Bin-wise sum of histograms with identical binning over disjoint tag sets.
    pub fn merge(&mut self, other: &Self) -> Result<(), CorrelatorError> {
        if self.bin_width_ps != other.bin_width_ps
            || self.lag_min_ps != other.lag_min_ps
            || self.lag_max_ps != other.lag_max_ps
        {
            return Err(CorrelatorError::InvalidBinning(
                "merging histograms with different binning".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Appends a histogram from a separate, later acquisition: counts and
    /// acquisition times add, rates become time-weighted means.
    pub fn accumulate(&mut self, other: &Self) -> Result<(), CorrelatorError> {
        self.merge(other)?;
        let t = self.acquisition_time_s + other.acquisition_time_s;
        if t > 0.0 {
            self.rate_a = (self.rate_a * self.acquisition_time_s + other.rate_a * other.acquisition_time_s) / t;
            self.rate_b = (self.rate_b * self.acquisition_time_s + other.rate_b * other.acquisition_time_s) / t;
        }
        self.acquisition_time_s = t;
        Ok(())
    }
}

fn times_i64(stream: &TimeTagStream, channel: u8) -> Vec<i64> {
    stream
        .tags()
        .iter()
        .filter(|t| t.channel == channel)
        .map(|t| t.t as i64)
        .collect()
}

/// Two-pointer sweep over `a[range]` against all of `b`.
fn sweep(
    a: &[i64],
    range: std::ops::Range<usize>,
    b: &[i64],
    same: bool,
    window: LagWindow,
    bw: i64,
    counts: &mut [u64],
) {
    let Some(&first) = a.get(range.start) else {
        return;
    };
    let mut lo = b.partition_point(|&tb| tb < first + window.min_ps);
    for i in range {
        let ta = a[i];
        let lower = ta + window.min_ps;
        let upper = ta + window.max_ps;
        while lo < b.len() && b[lo] < lower {
            lo += 1;
        }
        let mut j = lo;
        while j < b.len() && b[j] < upper {
            if !(same && j == i) {
                counts[((b[j] - lower) / bw) as usize] += 1;
            }
            j += 1;
        }
    }
}

/// Sequential full cross-correlation of `ch_b` against `ch_a`, lag `t_b − t_a`.
pub fn cross_correlate(
    stream: &TimeTagStream,
    ch_a: u8,
    ch_b: u8,
    bin_width_ps: u64,
    window: LagWindow,
) -> Result<CorrelationHistogram, CorrelatorError> {
    let n_bins = window.n_bins(bin_width_ps)?;
    let a = times_i64(stream, ch_a);
    let b = if ch_a == ch_b {
        a.clone()
    } else {
        times_i64(stream, ch_b)
    };
    let mut h = CorrelationHistogram::zeroed(bin_width_ps, window, n_bins);
    sweep(
        &a,
        0..a.len(),
        &b,
        ch_a == ch_b,
        window,
        bin_width_ps as i64,
        &mut h.counts,
    );
    Ok(h.with_rates(a.len(), b.len(), stream.duration_s()))
}

/// [`cross_correlate`] split over contiguous blocks of channel-A tags.
///
/// Each shard reads channel B past its own time boundary by the lag reach,
/// so every pair belongs to exactly one shard and the sum is exact.
pub fn cross_correlate_sharded(
    stream: &TimeTagStream,
    ch_a: u8,
    ch_b: u8,
    bin_width_ps: u64,
    window: LagWindow,
    n_shards: usize,
) -> Result<CorrelationHistogram, CorrelatorError> {
    let n_bins = window.n_bins(bin_width_ps)?;
    let a = times_i64(stream, ch_a);
    let b = if ch_a == ch_b {
        a.clone()
    } else {
        times_i64(stream, ch_b)
    };
    let same = ch_a == ch_b;
    let shards = n_shards.max(1);
    let chunk = a.len().div_ceil(shards).max(1);
    let counts = (0..shards)
        .into_par_iter()
        .map(|s| {
            let start = (s * chunk).min(a.len());
            let end = ((s + 1) * chunk).min(a.len());
            let mut c = vec![0u64; n_bins];
            sweep(&a, start..end, &b, same, window, bin_width_ps as i64, &mut c);
            c
        })
        .reduce(
            || vec![0u64; n_bins],
            |mut x, y| {
                x.iter_mut().zip(&y).for_each(|(p, q)| *p += q);
                x
            },
        );
    let mut h = CorrelationHistogram::zeroed(bin_width_ps, window, n_bins);
    h.counts = counts;
    Ok(h.with_rates(a.len(), b.len(), stream.duration_s()))
}

/// Quadratic reference implementation.
pub fn brute_force_correlate(
    stream: &TimeTagStream,
    ch_a: u8,
    ch_b: u8,
    bin_width_ps: u64,
    window: LagWindow,
) -> Result<CorrelationHistogram, CorrelatorError> {
    if stream.len() > ORACLE_MAX_TAGS {
        return Err(CorrelatorError::OracleTooLarge(stream.len()));
    }
    let n_bins = window.n_bins(bin_width_ps)?;
    let tags = stream.tags();
    let mut h = CorrelationHistogram::zeroed(bin_width_ps, window, n_bins);
    let (mut n_a, mut n_b) = (0, 0);
    for (i, x) in tags.iter().enumerate() {
        n_a += (x.channel == ch_a) as usize;
        n_b += (x.channel == ch_b) as usize;
        if x.channel != ch_a {
            continue;
        }
        for (j, y) in tags.iter().enumerate() {
            if y.channel != ch_b || i == j {
                continue;
            }
            let lag = y.t as i64 - x.t as i64;
            if lag >= window.min_ps && lag < window.max_ps {
                h.counts[((lag - window.min_ps) / bin_width_ps as i64) as usize] += 1;
            }
        }
    }
    Ok(h.with_rates(n_a, n_b, stream.duration_s()))
}

/// Push-based correlator: tags arrive in stream order and each pair is
/// counted when its later member arrives. Memory is bounded by the number of
/// tags inside one lag reach.
#[derive(Debug, Clone)]
pub struct StreamingCorrelator {
    ch_a: u8,
    ch_b: u8,
    window: LagWindow,
    bin_width_ps: u64,
    hist: CorrelationHistogram,
    recent_a: std::collections::VecDeque<i64>,
    recent_b: std::collections::VecDeque<i64>,
    n_a: usize,
    n_b: usize,
    last: Option<(u64, u8)>,
}

impl StreamingCorrelator {
    pub fn new(ch_a: u8, ch_b: u8, bin_width_ps: u64, window: LagWindow) -> Result<Self, CorrelatorError> {
        let n_bins = window.n_bins(bin_width_ps)?;
        Ok(Self {
            ch_a,
            ch_b,
            window,
            bin_width_ps,
            hist: CorrelationHistogram::zeroed(bin_width_ps, window, n_bins),
            recent_a: Default::default(),
            recent_b: Default::default(),
            n_a: 0,
            n_b: 0,
            last: None,
        })
    }

    fn bin(&mut self, lag: i64) {
        if lag >= self.window.min_ps && lag < self.window.max_ps {
            let i = ((lag - self.window.min_ps) / self.bin_width_ps as i64) as usize;
            self.hist.counts[i] += 1;
        }
    }

    pub fn push(&mut self, tag: TimeTag) -> Result<(), CorrelatorError> {
        if let Some(last) = self.last {
            if tag.key() < last {
                return Err(CorrelatorError::OutOfOrder { t: tag.t, last: last.0 });
            }
        }
        self.last = Some(tag.key());
        let t = tag.t as i64;
        let horizon = t - self.window.reach();
        while self.recent_a.front().is_some_and(|&x| x < horizon) {
            self.recent_a.pop_front();
        }
        while self.recent_b.front().is_some_and(|&x| x < horizon) {
            self.recent_b.pop_front();
        }
        let is_a = tag.channel == self.ch_a;
        let is_b = tag.channel == self.ch_b;
        if is_b {
            // Later tag plays B against earlier A tags.
            for k in 0..self.recent_a.len() {
                let lag = t - self.recent_a[k];
                self.bin(lag);
            }
        }
        if is_a {
            for k in 0..self.recent_b.len() {
                let lag = self.recent_b[k] - t;
                self.bin(lag);
            }
        }
        if is_a {
            self.recent_a.push_back(t);
            self.n_a += 1;
        }
        if is_b {
            self.recent_b.push_back(t);
            self.n_b += 1;
        }
        Ok(())
    }

    pub fn finish(self, duration_ps: u64) -> CorrelationHistogram {
        self.hist.with_rates(self.n_a, self.n_b, duration_ps as f64 * 1e-12)
    }
}

/// Detections binned by delay since the most recent sync tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifetimeHistogram {
    pub bin_width_ps: u64,
    pub counts: Vec<u64>,
}

impl LifetimeHistogram {
    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn range_ns(&self) -> f64 {
        (self.bin_width_ps * self.counts.len() as u64) as f64 * 1e-3
    }

    pub fn bin_width_ns(&self) -> f64 {
        self.bin_width_ps as f64 * 1e-3
    }

    pub fn bin_lower_ns(&self, i: usize) -> f64 {
        (i as u64 * self.bin_width_ps) as f64 * 1e-3
    }

    pub fn bin_centre_ns(&self, i: usize) -> f64 {
        self.bin_lower_ns(i) + 0.5 * self.bin_width_ns()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Delays `[0, range_ps)` of `det_ch` tags after the latest sync at or before them.
pub fn lifetime_histogram(
    stream: &TimeTagStream,
    sync_ch: u8,
    det_ch: u8,
    bin_width_ps: u64,
    range_ps: u64,
) -> Result<LifetimeHistogram, CorrelatorError> {
    if bin_width_ps == 0 || range_ps == 0 || range_ps % bin_width_ps != 0 {
        return Err(CorrelatorError::InvalidBinning(format!(
            "range {range_ps} ps must be a positive multiple of the {bin_width_ps} ps bin"
        )));
    }
    let n_bins = (range_ps / bin_width_ps) as usize;
    let mut counts = vec![0u64; n_bins];
    let mut last_sync: Option<u64> = None;
    let mut any_sync = false;
    let tags = stream.tags();
    let mut i = 0;
    while i < tags.len() {
        // Syncs sharing a timestamp with detections are applied first.
        let t = tags[i].t;
        let mut j = i;
        while j < tags.len() && tags[j].t == t {
            if tags[j].channel == sync_ch {
                last_sync = Some(t);
                any_sync = true;
            }
            j += 1;
        }
        for tag in &tags[i..j] {
            if tag.channel == det_ch && tag.channel != sync_ch {
                if let Some(s) = last_sync {
                    let d = tag.t - s;
                    if d < range_ps {
                        counts[(d / bin_width_ps) as usize] += 1;
                    }
                }
            }
        }
        i = j;
    }
    if !any_sync {
        return Err(CorrelatorError::NoSyncTags(sync_ch));
    }
    Ok(LifetimeHistogram { bin_width_ps, counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityTrace {
    pub bin_s: f64,
    pub start_s: f64,
    pub counts: Vec<u64>,
}

impl IntensityTrace {
    pub fn rates(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.bin_s).collect()
    }
}

/// Counts per `bin_s` window over the given channels. Only whole bins are kept.
pub fn intensity_trace(stream: &TimeTagStream, channels: &[u8], bin_s: f64) -> Result<IntensityTrace, CorrelatorError> {
    if !(bin_s > 0.0 && bin_s.is_finite()) {
        return Err(CorrelatorError::InvalidArgument(format!(
            "bin duration {bin_s} s must be positive"
        )));
    }
    let bin_ps = (bin_s * 1e12).round().max(1.0) as u64;
    let n_bins = (stream.duration_ps() / bin_ps) as usize;
    let mut counts = vec![0u64; n_bins];
    for tag in stream.tags() {
        if channels.contains(&tag.channel) {
            let k = (tag.t / bin_ps) as usize;
            if k < n_bins {
                counts[k] += 1;
            }
        }
    }
    Ok(IntensityTrace {
        bin_s,
        start_s: 0.0,
        counts,
    })
}

/// Distribution of trace rates, bins of `bin_rate` counts/s starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRateHistogram {
    pub bin_rate: f64,
    pub counts: Vec<u64>,
}

pub fn count_rate_histogram(trace: &IntensityTrace, bin_rate: f64) -> Result<CountRateHistogram, CorrelatorError> {
    if !(bin_rate > 0.0 && bin_rate.is_finite()) {
        return Err(CorrelatorError::InvalidArgument(
            "count-rate bin must be positive".into(),
        ));
    }
    let rates = trace.rates();
    let n = rates
        .iter()
        .map(|r| (r / bin_rate).floor() as usize + 1)
        .max()
        .unwrap_or(0);
    let mut counts = vec![0u64; n];
    for r in rates {
        counts[(r / bin_rate).floor() as usize] += 1;
    }
    Ok(CountRateHistogram { bin_rate, counts })
}

/// Two-cluster split of an intensity trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeAnalysis {
    /// Counts per bin at or above this value belong to the upper mode.
    pub threshold: u64,
    pub low_mean: f64,
    pub high_mean: f64,
    pub low_bins: usize,
    pub high_bins: usize,
    /// Mode separation in units of the upper mode's Poisson σ.
    pub separation_sigma: f64,
    pub bimodal: bool,
}

/// Otsu split of the per-bin counts. The trace is called bimodal when both
/// clusters are populated and their means differ by more than three Poisson
/// standard deviations of either mode.
pub fn analyze_modes(trace: &IntensityTrace) -> ModeAnalysis {
    let mut v = trace.counts.clone();
    v.sort_unstable();
    let n = v.len();
    let mut best = (f64::NEG_INFINITY, 0usize);
    let total: f64 = v.iter().map(|&x| x as f64).sum();
    let mut prefix = 0.0;
    for k in 1..n {
        prefix += v[k - 1] as f64;
        if v[k] == v[k - 1] {
            continue;
        }
        let (n0, n1) = (k as f64, (n - k) as f64);
        let (m0, m1) = (prefix / n0, (total - prefix) / n1);
        let between = n0 * n1 * (m1 - m0).powi(2);
        if between > best.0 {
            best = (between, k);
        }
    }
    let k = best.1;
    if k == 0 {
        let mean = if n > 0 { total / n as f64 } else { 0.0 };
        return ModeAnalysis {
            threshold: v.first().copied().unwrap_or(0),
            low_mean: mean,
            high_mean: mean,
            low_bins: 0,
            high_bins: n,
            separation_sigma: 0.0,
            bimodal: false,
        };
    }
    let low_mean = v[..k].iter().map(|&x| x as f64).sum::<f64>() / k as f64;
    let high_mean = v[k..].iter().map(|&x| x as f64).sum::<f64>() / (n - k) as f64;
    let sigma = high_mean.max(1.0).sqrt();
    let separation_sigma = (high_mean - low_mean) / sigma;
    ModeAnalysis {
        threshold: v[k],
        low_mean,
        high_mean,
        low_bins: k,
        high_bins: n - k,
        separation_sigma,
        bimodal: separation_sigma > 3.0 && k >= 2 && n - k >= 2,
    }
}
