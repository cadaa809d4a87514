//! Weighted nonlinear least-squares fits of the lifetime, saturation and
//! autocorrelation models, background correction and emitter counting.
//!
//! Histogram models are integrated over each bin rather than sampled at the
//! centre, so fits stay unbiased when the bin width is comparable to the
//! time constants. Uncertainties are the square roots of the diagonal of
//! `(JᵀJ)⁻¹` at the optimum (linearized, hence approximate).

mod lm;
pub mod models;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlator::{CorrelationHistogram, LifetimeHistogram};
use crate::emitter::{G2Params, LifetimeParams, SaturationParams};

pub use lm::{MAX_ITERATIONS, PARAM_TOLERANCE};

/// Relative spread below which two fitted time constants count as one.
const DEGENERATE_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {need} non-empty bins, got {got}")]
    TooFewBins { need: usize, got: usize },
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("sigma = {0} must be in (0, 1]")]
    InvalidSigma(f64),
    #[error("g2(0) = {0} must be below 1")]
    NotAntibunched(f64),
    #[error("histogram has no normalization (a channel is empty or the acquisition time is zero)")]
    NotNormalized,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFlag {
    NotConverged,
    /// The two lifetime constants agree within 5 %.
    SingleExponential,
    /// The shelving term vanished or merged into the antibunching term.
    TwoLevel,
    PSatAtBound,
    /// Deepest point of the correlation is above 0.9.
    WeakDip,
    /// Fewer than five distinct powers, or none on one side of the knee.
    PoorPowerCoverage,
}

/// Parameter sets that can be packed into a flat vector.
pub trait ModelParams: Sized {
    const NAMES: &'static [&'static str];
    fn to_vec(&self) -> Vec<f64>;
    fn from_slice(v: &[f64]) -> Self;
}

impl ModelParams for LifetimeParams {
    const NAMES: &'static [&'static str] = &["I_1", "I_2", "I_bias", "t_1", "t_2", "t_0"];
    fn to_vec(&self) -> Vec<f64> {
        vec![self.i_1, self.i_2, self.i_bias, self.t_1, self.t_2, self.t_0]
    }
    fn from_slice(v: &[f64]) -> Self {
        Self {
            i_1: v[0],
            i_2: v[1],
            i_bias: v[2],
            t_1: v[3],
            t_2: v[4],
            t_0: v[5],
        }
    }
}

impl ModelParams for SaturationParams {
    const NAMES: &'static [&'static str] = &["R_sat", "P_sat", "a", "b"];
    fn to_vec(&self) -> Vec<f64> {
        vec![self.r_sat, self.p_sat, self.a, self.b]
    }
    fn from_slice(v: &[f64]) -> Self {
        Self {
            r_sat: v[0],
            p_sat: v[1],
            a: v[2],
            b: v[3],
        }
    }
}

impl ModelParams for G2Params {
    const NAMES: &'static [&'static str] = &["p_ge", "p_s", "tau_ge", "tau_s", "tau_0"];
    fn to_vec(&self) -> Vec<f64> {
        vec![self.p_ge, self.p_s, self.tau_ge, self.tau_s, self.tau_0]
    }
    fn from_slice(v: &[f64]) -> Self {
        Self {
            p_ge: v[0],
            p_s: v[1],
            tau_ge: v[2],
            tau_s: v[3],
            tau_0: v[4],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult<P> {
    pub params: P,
    /// 1σ, same layout as `params`.
    pub uncertainties: P,
    /// Row-major, in the order of [`ModelParams::NAMES`].
    pub covariance: Vec<Vec<f64>>,
    /// Weighted residual sum of squares.
    pub rss: f64,
    pub n_points: usize,
    pub n_free: usize,
    pub converged: bool,
    pub iterations: usize,
    pub flags: Vec<FitFlag>,
}

impl<P: ModelParams> FitResult<P> {
    fn from_solution(sol: lm::Solution, n_points: usize, n_free: usize) -> Self {
        let n = sol.params.len();
        let sd: Vec<f64> = (0..n).map(|j| sol.covariance[(j, j)].max(0.0).sqrt()).collect();
        let covariance = (0..n)
            .map(|r| (0..n).map(|c| sol.covariance[(r, c)]).collect())
            .collect();
        let mut flags = Vec::new();
        if !sol.converged {
            flags.push(FitFlag::NotConverged);
        }
        Self {
            params: P::from_slice(&sol.params),
            uncertainties: P::from_slice(&sd),
            covariance,
            rss: sol.chi2,
            n_points,
            n_free,
            converged: sol.converged,
            iterations: sol.iterations,
            flags,
        }
    }

    pub fn reduced_chi2(&self) -> f64 {
        let dof = self.n_points.saturating_sub(self.n_free);
        if dof == 0 {
            f64::NAN
        } else {
            self.rss / dof as f64
        }
    }

    pub fn has_flag(&self, flag: FitFlag) -> bool {
        self.flags.contains(&flag)
    }

    fn flag(&mut self, flag: FitFlag) {
        if !self.flags.contains(&flag) {
            self.flags.push(flag);
        }
    }
}

impl FitResult<G2Params> {
    /// Fitted `g²(τ_0)` and its 1σ uncertainty.
    pub fn g2_at_center(&self) -> (f64, f64) {
        let c = &self.covariance;
        let var = c[0][0] + c[1][1] - 2.0 * c[0][1];
        (self.params.g2_at_center(), var.max(0.0).sqrt())
    }
}

fn best<P: ModelParams>(a: Option<FitResult<P>>, b: FitResult<P>) -> Option<FitResult<P>> {
    match a {
        Some(a) if (a.converged, -a.rss) >= (b.converged, -b.rss) => Some(a),
        _ => Some(b),
    }
}

fn poisson_sigma(counts: f64) -> f64 {
    counts.max(1.0).sqrt()
}

/// Bi-exponential fit of a sync-referenced histogram with Poisson weights.
///
/// The slower constant is reported as `t_1`.
pub fn fit_biexponential(
    hist: &LifetimeHistogram,
    t0_hint: Option<f64>,
) -> Result<FitResult<LifetimeParams>, FitError> {
    let non_empty = hist.counts.iter().filter(|&&c| c > 0).count();
    if non_empty < 8 {
        return Err(FitError::TooFewBins {
            need: 8,
            got: non_empty,
        });
    }
    let bw = hist.bin_width_ns();
    let range = hist.range_ns();
    let y: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let sigma: Vec<f64> = y.iter().map(|&c| poisson_sigma(c)).collect();
    let lower_edges: Vec<f64> = (0..y.len()).map(|i| hist.bin_lower_ns(i)).collect();

    let peak = (0..y.len()).fold(0, |b, i| if y[i] > y[b] { i } else { b });
    let t0 = t0_hint.unwrap_or(lower_edges[peak]);
    let tail = (y.len() / 10).max(1);
    let bias = if peak >= 4 {
        y[..peak - 1].iter().sum::<f64>() / (peak - 1) as f64
    } else {
        y[y.len() - tail..].iter().sum::<f64>() / tail as f64
    };
    let amp = (y[peak] - bias).max(1.0);
    let t_e = (peak..y.len())
        .find(|&i| y[i] - bias <= amp / std::f64::consts::E)
        .map(|i| lower_edges[i] + 0.5 * bw - t0)
        .unwrap_or(range / 4.0)
        .max(bw);

    let t_min = 0.05 * bw;
    let t_max = 100.0 * range;
    let lower = [0.0, 0.0, 0.0, t_min, t_min, -range];
    let upper = [f64::INFINITY, f64::INFINITY, f64::INFINITY, t_max, t_max, range];
    let free = [true; 6];
    let prob = lm::Problem {
        y: &y,
        sigma: &sigma,
        model: |p: &[f64], i: usize, g: &mut [f64]| {
            models::lifetime_bin(&LifetimeParams::from_slice(p), lower_edges[i], bw, g)
        },
        lower: &lower,
        upper: &upper,
        free: &free,
    };

    let mut winner: Option<FitResult<LifetimeParams>> = None;
    for &(frac, slow, fast) in &[(0.5, 1.5, 0.2), (0.8, 1.2, 0.3), (0.3, 2.0, 0.1), (0.6, 1.0, 0.5)] {
        let p0 = [amp * frac, amp * (1.0 - frac), bias, t_e * slow, t_e * fast, t0];
        let fit = FitResult::from_solution(prob.solve(&p0), y.len(), 6);
        winner = best(winner, fit);
    }
    let mut fit = winner.expect("at least one start");
    if fit.params.t_2 > fit.params.t_1 {
        swap_lifetime_components(&mut fit);
    }
    let (t1, t2) = (fit.params.t_1, fit.params.t_2);
    if (t1 - t2).abs() <= DEGENERATE_TOLERANCE * t1.max(t2) {
        fit.flag(FitFlag::SingleExponential);
    }
    Ok(fit)
}

fn swap_lifetime_components(fit: &mut FitResult<LifetimeParams>) {
    // Index pairs (I_1, I_2) and (t_1, t_2) in NAMES order.
    let perm = [1, 0, 2, 4, 3, 5];
    let p = fit.params.to_vec();
    let s = fit.uncertainties.to_vec();
    fit.params = LifetimeParams::from_slice(&perm.map(|k| p[k]));
    fit.uncertainties = LifetimeParams::from_slice(&perm.map(|k| s[k]));
    let c = fit.covariance.clone();
    for r in 0..6 {
        for k in 0..6 {
            fit.covariance[r][k] = c[perm[r]][perm[k]];
        }
    }
}

/// One measured count rate with its standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationPoint {
    pub power_mw: f64,
    pub rate: f64,
    pub sigma: f64,
}

/// Weighted fit of `R_sat·P/(P_sat+P) + a·P + b`. With `reduced` the linear
/// and constant terms are held at zero.
pub fn fit_saturation(points: &[SaturationPoint], reduced: bool) -> Result<FitResult<SaturationParams>, FitError> {
    let n_free = if reduced { 2 } else { 4 };
    if points.len() <= n_free {
        return Err(FitError::TooFewPoints {
            need: n_free + 1,
            got: points.len(),
        });
    }
    for p in points {
        if !(p.sigma > 0.0 && p.sigma.is_finite() && p.power_mw >= 0.0 && p.rate.is_finite()) {
            return Err(FitError::InvalidInput(format!(
                "point {p:?} needs power ≥ 0, finite rate and σ > 0"
            )));
        }
    }
    let x: Vec<f64> = points.iter().map(|p| p.power_mw).collect();
    let y: Vec<f64> = points.iter().map(|p| p.rate).collect();
    let sigma: Vec<f64> = points.iter().map(|p| p.sigma).collect();
    let p_max = x.iter().cloned().fold(0.0, f64::max);
    let p_min_pos = x.iter().cloned().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    if !(p_max > 0.0) {
        return Err(FitError::InvalidInput("all powers are zero".into()));
    }

    // Seed P_sat at the power where the rate first reaches half its maximum.
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let r_max = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let p_half = order
        .windows(2)
        .find(|w| y[w[1]] >= 0.5 * r_max && y[w[0]] < 0.5 * r_max)
        .map(|w| {
            let (x0, x1, y0, y1) = (x[w[0]], x[w[1]], y[w[0]], y[w[1]]);
            x0 + (0.5 * r_max - y0) * (x1 - x0) / (y1 - y0)
        })
        .unwrap_or(0.5 * p_max)
        .max(p_min_pos);

    let lower = [0.0, 1e-3 * p_min_pos, f64::NEG_INFINITY, f64::NEG_INFINITY];
    let upper = [f64::INFINITY, 1e3 * p_max, f64::INFINITY, f64::INFINITY];
    let free = [true, true, !reduced, !reduced];
    let prob = lm::Problem {
        y: &y,
        sigma: &sigma,
        model: |p: &[f64], i: usize, g: &mut [f64]| models::saturation_point(&SaturationParams::from_slice(p), x[i], g),
        lower: &lower,
        upper: &upper,
        free: &free,
    };
    let mut winner: Option<FitResult<SaturationParams>> = None;
    for scale in [1.0, 0.3, 3.0] {
        let ps = p_half * scale;
        let p0 = [r_max.max(0.0) * (ps + p_max) / p_max, ps, 0.0, 0.0];
        winner = best(winner, FitResult::from_solution(prob.solve(&p0), y.len(), n_free));
    }
    let mut fit = winner.expect("at least one start");
    let ps = fit.params.p_sat;
    if ps <= lower[1] * (1.0 + 1e-6) || ps >= upper[1] * (1.0 - 1e-6) {
        fit.flag(FitFlag::PSatAtBound);
    }
    let mut distinct = x.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 5 || !(distinct[0] < ps && ps < p_max) {
        fit.flag(FitFlag::PoorPowerCoverage);
    }
    Ok(fit)
}

/// Normalized correlation values with their standard deviations.
///
/// `width_ns == 0` means point samples; otherwise each entry is a bin
/// `[lower_ns, lower_ns + width_ns)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Series {
    pub lower_ns: Vec<f64>,
    pub width_ns: f64,
    pub values: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl G2Series {
    pub fn from_points(tau_ns: Vec<f64>, values: Vec<f64>, sigma: Vec<f64>) -> Result<Self, FitError> {
        let s = Self {
            lower_ns: tau_ns,
            width_ns: 0.0,
            values,
            sigma,
        };
        s.validate()?;
        Ok(s)
    }

    /// Bins with Poisson errors `√max(counts, 1)` scaled by the normalization.
    pub fn from_histogram(hist: &CorrelationHistogram) -> Result<Self, FitError> {
        let norm = hist.normalization().ok_or(FitError::NotNormalized)?;
        Ok(Self {
            lower_ns: (0..hist.n_bins()).map(|i| hist.bin_lower_ps(i) as f64 * 1e-3).collect(),
            width_ns: hist.bin_width_ps as f64 * 1e-3,
            values: hist.counts.iter().map(|&c| c as f64 / norm).collect(),
            sigma: hist.counts.iter().map(|&c| poisson_sigma(c as f64) / norm).collect(),
        })
    }

    fn validate(&self) -> Result<(), FitError> {
        let n = self.values.len();
        if self.lower_ns.len() != n || self.sigma.len() != n {
            return Err(FitError::InvalidInput("series columns differ in length".into()));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(FitError::InvalidInput("every σ must be positive and finite".into()));
        }
        if !(self.width_ns >= 0.0) {
            return Err(FitError::InvalidInput("bin width must be non-negative".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn centre_ns(&self, i: usize) -> f64 {
        self.lower_ns[i] + 0.5 * self.width_ns
    }

    /// All time coordinates moved by `dt_ns`.
    pub fn shifted(&self, dt_ns: f64) -> Self {
        Self {
            lower_ns: self.lower_ns.iter().map(|x| x + dt_ns).collect(),
            ..self.clone()
        }
    }
}

pub fn fit_g2(hist: &CorrelationHistogram) -> Result<FitResult<G2Params>, FitError> {
    fit_g2_series(&G2Series::from_histogram(hist)?)
}

/// Fit of the symmetric three-level model, multi-started over `τ_s`.
pub fn fit_g2_series(series: &G2Series) -> Result<FitResult<G2Params>, FitError> {
    series.validate()?;
    let n = series.len();
    if n < 8 {
        return Err(FitError::TooFewPoints { need: 8, got: n });
    }
    let y = &series.values;
    let centres: Vec<f64> = (0..n).map(|i| series.centre_ns(i)).collect();
    let span = centres[n - 1] - centres[0];
    if !(span > 0.0) {
        return Err(FitError::InvalidInput("series must cover a range of delays".into()));
    }

    // Lightly smoothed copy for seeding only.
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(2), (i + 3).min(n));
            y[a..b].iter().sum::<f64>() / (b - a) as f64
        })
        .collect();
    let i_min = (0..n).fold(0, |b, i| if smooth[i] < smooth[b] { i } else { b });
    let tau0 = centres[i_min];
    let edge = (n / 10).max(1);
    let baseline = (y[..edge].iter().sum::<f64>() + y[n - edge..].iter().sum::<f64>()) / (2 * edge) as f64;
    let depth = (baseline - smooth[i_min]).max(0.05);
    let half = smooth[i_min] + 0.5 * depth;
    let right = (i_min..n).find(|&i| smooth[i] >= half).map(|i| centres[i] - tau0);
    let left = (0..=i_min)
        .rev()
        .find(|&i| smooth[i] >= half)
        .map(|i| tau0 - centres[i]);
    let step = span / (n - 1) as f64;
    let hw = match (left, right) {
        (Some(l), Some(r)) => 0.5 * (l + r),
        (Some(w), None) | (None, Some(w)) => w,
        (None, None) => span / 4.0,
    }
    .max(step);
    let tau_ge_seed = hw / std::f64::consts::LN_2;
    let p_s_seed = (baseline - 1.0).max(0.02);

    let t_min = 1e-3 * step;
    let t_max = 10.0 * span;
    let lower = [0.0, 0.0, t_min, t_min, centres[0]];
    let upper = [10.0, 10.0, t_max, t_max, centres[n - 1]];
    let free = [true; 5];
    let lowers = &series.lower_ns;
    let width = series.width_ns;
    let prob = lm::Problem {
        y,
        sigma: &series.sigma,
        model: |p: &[f64], i: usize, g: &mut [f64]| models::g2_bin(&G2Params::from_slice(p), lowers[i], width, g),
        lower: &lower,
        upper: &upper,
        free: &free,
    };
    let mut winner: Option<FitResult<G2Params>> = None;
    for factor in [3.0, 10.0, 30.0, 100.0] {
        for ps in [p_s_seed, 0.5] {
            let p0 = [1.0 + ps - smooth[i_min], ps, tau_ge_seed, tau_ge_seed * factor, tau0];
            winner = best(winner, FitResult::from_solution(prob.solve(&p0), n, 5));
        }
    }
    let mut fit = winner.expect("at least one start");
    let p = fit.params;
    if p.p_s <= 1e-9 || (p.tau_s - p.tau_ge).abs() <= DEGENERATE_TOLERANCE * p.tau_ge {
        fit.flag(FitFlag::TwoLevel);
    }
    if y.iter().cloned().fold(f64::INFINITY, f64::min) >= 0.9 {
        fit.flag(FitFlag::WeakDip);
    }
    Ok(fit)
}

fn check_sigma(sigma: f64) -> Result<f64, FitError> {
    if sigma > 0.0 && sigma <= 1.0 {
        Ok(sigma * sigma)
    } else {
        Err(FitError::InvalidSigma(sigma))
    }
}

/// Inverse of the background-mixing relation for a single value.
pub fn correct_background_value(g2_gb: f64, sigma: f64) -> Result<f64, FitError> {
    let s2 = check_sigma(sigma)?;
    Ok((g2_gb - 1.0 + s2) / s2)
}

/// Bin-wise background correction; uncertainties scale by `1/σ²`.
pub fn correct_background(series: &G2Series, sigma: f64) -> Result<G2Series, FitError> {
    let s2 = check_sigma(sigma)?;
    Ok(G2Series {
        values: series.values.iter().map(|g| (g - 1.0 + s2) / s2).collect(),
        sigma: series.sigma.iter().map(|e| e / s2).collect(),
        ..series.clone()
    })
}

/// Nearest emitter count `n` with `g²(0) = 1 − 1/n`, and the mismatch.
pub fn estimate_emitter_count(g2_0: f64) -> Result<(u32, f64), FitError> {
    if !(g2_0 < 1.0) {
        return Err(FitError::NotAntibunched(g2_0));
    }
    let n = (1.0 / (1.0 - g2_0)).round().max(1.0) as u32;
    Ok((n, (g2_0 - (1.0 - 1.0 / n as f64)).abs()))
}
