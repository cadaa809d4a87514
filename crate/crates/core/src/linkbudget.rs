//! Deterministic optics: detected-rate chain, spectral coupler efficiency,
//! the three-term background model, signal fraction and SiN bleaching.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Power at which bleaching exposure times are quoted (mW).
pub const BLEACH_REFERENCE_POWER_MW: f64 = 2.0;
/// Per-channel detector dark counts (counts/s).
pub const DEFAULT_DARK_RATE: f64 = 350.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BudgetError {
    #[error("invalid link budget: {0}")]
    InvalidBudget(String),
    #[error("invalid spectral curve: {0}")]
    InvalidCurve(String),
    #[error("spectral curve parse error on line {line}: {msg}")]
    CurveParse { line: usize, msg: String },
    #[error("coupler and emission spectra do not overlap")]
    DisjointSpectra,
    #[error("all noise terms are zero")]
    ZeroNoise,
    #[error("signal + noise must be positive")]
    ZeroTotal,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

fn check_fraction(name: &str, v: f64) -> Result<(), BudgetError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(BudgetError::InvalidBudget(format!("{name} = {v} is outside [0, 1]")))
    }
}

fn check_rate(name: &str, v: f64) -> Result<(), BudgetError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(BudgetError::InvalidBudget(format!(
            "{name} = {v} must be a non-negative finite value"
        )))
    }
}

/// The emitter → detector efficiency chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkBudget {
    pub eta_q: f64,
    /// Radiative lifetime (ns). When absent it is derived as `tau_bulk_ns / purcell_f`.
    #[serde(default)]
    pub tau_rad_ns: Option<f64>,
    #[serde(default = "default_purcell")]
    pub purcell_f: f64,
    #[serde(default = "default_tau_bulk")]
    pub tau_bulk_ns: f64,
    /// Emitter-to-waveguide coupling, both propagation directions combined.
    pub eta_wg: f64,
    pub eta_grating: f64,
    pub eta_det: f64,
}

fn default_purcell() -> f64 {
    1.0
}

fn default_tau_bulk() -> f64 {
    12.0
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            eta_q: 0.07,
            tau_rad_ns: Some(10.0),
            purcell_f: 1.0,
            tau_bulk_ns: 12.0,
            eta_wg: 0.09,
            eta_grating: 0.02,
            eta_det: 0.21,
        }
    }
}

impl LinkBudget {
    pub fn validate(&self) -> Result<(), BudgetError> {
        check_fraction("eta_q", self.eta_q)?;
        check_fraction("eta_wg", self.eta_wg)?;
        check_fraction("eta_grating", self.eta_grating)?;
        check_fraction("eta_det", self.eta_det)?;
        if !(self.purcell_f > 0.0 && self.purcell_f.is_finite()) {
            return Err(BudgetError::InvalidBudget("purcell_f must be positive".into()));
        }
        if !(self.tau_bulk_ns > 0.0) {
            return Err(BudgetError::InvalidBudget("tau_bulk_ns must be positive".into()));
        }
        if let Some(t) = self.tau_rad_ns {
            if !(t > 0.0 && t.is_finite()) {
                return Err(BudgetError::InvalidBudget("tau_rad_ns must be positive".into()));
            }
        }
        Ok(())
    }

    /// Radiative lifetime in ns; an explicit value wins over the Purcell route.
    pub fn resolved_tau_rad_ns(&self) -> f64 {
        self.tau_rad_ns.unwrap_or(self.tau_bulk_ns / self.purcell_f)
    }

    /// Probability that a radiative decay ends up as a detection.
    pub fn photon_efficiency(&self) -> f64 {
        self.eta_q * self.eta_wg * self.eta_grating * self.eta_det
    }
}

/// Saturated detected emission rate in counts/s.
pub fn detected_rate(budget: &LinkBudget) -> Result<f64, BudgetError> {
    budget.validate()?;
    let k_rad = 1.0e9 / budget.resolved_tau_rad_ns();
    Ok(budget.eta_q * k_rad * budget.eta_wg * budget.eta_grating * budget.eta_det)
}

/// A sampled spectrum or transmission curve on a strictly increasing wavelength grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralCurve {
    samples: Vec<(f64, f64)>,
}

impl SpectralCurve {
    pub fn new(samples: Vec<(f64, f64)>) -> Result<Self, BudgetError> {
        if samples.len() < 2 {
            return Err(BudgetError::InvalidCurve("need at least two samples".into()));
        }
        for w in samples.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(BudgetError::InvalidCurve(format!(
                    "wavelengths not strictly increasing at {} nm",
                    w[1].0
                )));
            }
        }
        if let Some(&(wl, v)) = samples
            .iter()
            .find(|(wl, v)| !(*v >= 0.0) || !wl.is_finite() || !v.is_finite())
        {
            return Err(BudgetError::InvalidCurve(format!("bad sample ({wl}, {v})")));
        }
        Ok(Self { samples })
    }

    /// Parses the two-column `wavelength_nm,value` CSV format. `#` starts a comment.
    pub fn from_csv(text: &str) -> Result<Self, BudgetError> {
        let mut samples = Vec::new();
        let mut seen_header = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if !seen_header {
                seen_header = true;
                let cols: Vec<&str> = line.split(',').map(str::trim).collect();
                if cols != ["wavelength_nm", "value"] {
                    return Err(BudgetError::CurveParse {
                        line: idx + 1,
                        msg: format!("expected header `wavelength_nm,value`, got `{line}`"),
                    });
                }
                continue;
            }
            let mut parts = line.split(',').map(str::trim);
            let parse = |s: Option<&str>| -> Result<f64, BudgetError> {
                s.ok_or_else(|| BudgetError::CurveParse {
                    line: idx + 1,
                    msg: "expected two columns".into(),
                })?
                .parse::<f64>()
                .map_err(|e| BudgetError::CurveParse {
                    line: idx + 1,
                    msg: e.to_string(),
                })
            };
            let wl = parse(parts.next())?;
            let v = parse(parts.next())?;
            if parts.next().is_some() {
                return Err(BudgetError::CurveParse {
                    line: idx + 1,
                    msg: "expected two columns".into(),
                });
            }
            samples.push((wl, v));
        }
        Self::new(samples)
    }

    pub fn samples(&self) -> &[(f64, f64)] {
        &self.samples
    }

    pub fn range(&self) -> (f64, f64) {
        (self.samples[0].0, self.samples[self.samples.len() - 1].0)
    }

    pub fn max_value(&self) -> f64 {
        self.samples.iter().map(|s| s.1).fold(0.0, f64::max)
    }

    /// Linear interpolation; zero outside the sampled range.
    pub fn value_at(&self, wl: f64) -> f64 {
        let (lo, hi) = self.range();
        if wl < lo || wl > hi {
            return 0.0;
        }
        let i = self.samples.partition_point(|s| s.0 <= wl);
        if i == 0 {
            return self.samples[0].1;
        }
        if i == self.samples.len() {
            return self.samples[i - 1].1;
        }
        let (x0, y0) = self.samples[i - 1];
        let (x1, y1) = self.samples[i];
        y0 + (y1 - y0) * (wl - x0) / (x1 - x0)
    }

    /// Trapezoidal integral over the curve's own samples.
    pub fn integral(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
            .sum()
    }
}

/// Emission-weighted mean of a coupler transmission curve.
///
/// The numerator is integrated on the merged sample grid of both curves
/// (restricted to the emission support); the coupler counts as zero outside
/// its tabulated range.
pub fn spectral_efficiency(coupler: &SpectralCurve, emission: &SpectralCurve) -> Result<f64, BudgetError> {
    let (e_lo, e_hi) = emission.range();
    let (c_lo, c_hi) = coupler.range();
    if c_hi < e_lo || c_lo > e_hi {
        return Err(BudgetError::DisjointSpectra);
    }
    let norm = emission.integral();
    if norm <= 0.0 {
        return Err(BudgetError::InvalidCurve("emission spectrum integrates to zero".into()));
    }
    let mut grid: Vec<f64> = emission
        .samples()
        .iter()
        .chain(coupler.samples())
        .map(|s| s.0)
        .filter(|&wl| wl >= e_lo && wl <= e_hi)
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let weighted: f64 = grid
        .windows(2)
        .map(|w| {
            let f0 = coupler.value_at(w[0]) * emission.value_at(w[0]);
            let f1 = coupler.value_at(w[1]) * emission.value_at(w[1]);
            0.5 * (f0 + f1) * (w[1] - w[0])
        })
        .sum();
    Ok(weighted / norm)
}

/// Reference curves shipped with the crate.
pub mod spectra {
    use super::SpectralCurve;

    const GRATING: &str = include_str!("../data/grating_coupler.csv");
    const EDGE: &str = include_str!("../data/edge_coupler.csv");
    const NV_EMISSION: &str = include_str!("../data/nv_emission.csv");

    /// Single grating coupler transmission (design curve).
    pub fn grating_coupler() -> SpectralCurve {
        SpectralCurve::from_csv(GRATING).expect("bundled grating curve is valid")
    }

    /// Tapered edge coupler transmission.
    pub fn edge_coupler() -> SpectralCurve {
        SpectralCurve::from_csv(EDGE).expect("bundled edge-coupler curve is valid")
    }

    /// Room-temperature NV⁻ photoluminescence, arbitrary units.
    pub fn nv_emission() -> SpectralCurve {
        SpectralCurve::from_csv(NV_EMISSION).expect("bundled NV spectrum is valid")
    }
}

/// Background sources for a single grating output.
///
/// Exposure terms bundle the unreported power density, penetration depth and
/// interaction area into one product per term, quoted at `reference_pump_mw`.
/// All three terms scale linearly with pump power.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseBudget {
    /// SiN material response at the (bleached) excitation spot, Hz/(W·m).
    pub alpha1_sin: f64,
    /// Unbleached SiN response along the waveguide, Hz/(W·m).
    pub alpha2_sin: f64,
    /// Directly pumped SiN exposure `E·L·A` at the reference pump (W·m).
    pub sin1_exposure: f64,
    /// Guided-pump SiN exposure per unit `gamma·eta_sc` at the reference pump (W·m).
    pub sin2_exposure: f64,
    /// Pump-to-waveguide coupling per direction.
    pub eta_sc: f64,
    /// Scattering enhancement from the deposited nanodiamonds (≥ 1).
    pub gamma: f64,
    pub eta_wg_sin: f64,
    pub eta_grating_sin: f64,
    pub eta_grating_fibre: f64,
    /// Fibre fluorescence rate × detector efficiency at the reference pump (Hz).
    pub fibre_rate_eta_det: f64,
    pub reference_pump_mw: f64,
    pub eta_det: f64,
    /// Detector dark counts per channel (counts/s).
    pub dark_rate: f64,
}

impl Default for NoiseBudget {
    fn default() -> Self {
        Self {
            alpha1_sin: 1.8e14,
            alpha2_sin: 7.0e15,
            sin1_exposure: 2.857_142_857e-10,
            sin2_exposure: 5.442_176_871e-6,
            eta_sc: 0.5e-7,
            gamma: 3.0,
            eta_wg_sin: 0.15,
            eta_grating_sin: 0.03,
            eta_grating_fibre: 0.0104,
            fibre_rate_eta_det: 6.0e11,
            reference_pump_mw: 6.0,
            eta_det: 0.21,
            dark_rate: DEFAULT_DARK_RATE,
        }
    }
}

impl NoiseBudget {
    pub fn validate(&self) -> Result<(), BudgetError> {
        if !(self.gamma >= 1.0 && self.gamma.is_finite()) {
            return Err(BudgetError::InvalidBudget(format!(
                "gamma = {} must be ≥ 1",
                self.gamma
            )));
        }
        check_fraction("eta_sc", self.eta_sc)?;
        check_fraction("eta_wg_sin", self.eta_wg_sin)?;
        check_fraction("eta_grating_sin", self.eta_grating_sin)?;
        check_fraction("eta_grating_fibre", self.eta_grating_fibre)?;
        check_fraction("eta_det", self.eta_det)?;
        check_rate("alpha1_sin", self.alpha1_sin)?;
        check_rate("alpha2_sin", self.alpha2_sin)?;
        check_rate("sin1_exposure", self.sin1_exposure)?;
        check_rate("sin2_exposure", self.sin2_exposure)?;
        check_rate("fibre_rate_eta_det", self.fibre_rate_eta_det)?;
        check_rate("dark_rate", self.dark_rate)?;
        if !(self.reference_pump_mw > 0.0) {
            return Err(BudgetError::InvalidBudget("reference_pump_mw must be positive".into()));
        }
        Ok(())
    }
}

/// Detected background rates for one grating output, counts/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseRates {
    /// Fluorescence of the directly pumped SiN.
    pub r1_sin: f64,
    /// Fluorescence excited by pump light guided in the waveguide.
    pub r2_sin: f64,
    /// Excitation-fibre fluorescence scattered into the waveguide.
    pub r1_fibre: f64,
}

impl NoiseRates {
    pub fn total(&self) -> f64 {
        self.r1_sin + self.r2_sin + self.r1_fibre
    }

    pub fn as_tuple(&self) -> (f64, f64, f64) {
        (self.r1_sin, self.r2_sin, self.r1_fibre)
    }
}

pub fn noise_rates(power_mw: f64, nb: &NoiseBudget) -> Result<NoiseRates, BudgetError> {
    if !(power_mw >= 0.0) {
        return Err(BudgetError::InvalidArgument(format!(
            "pump power {power_mw} mW is negative"
        )));
    }
    nb.validate()?;
    let scale = power_mw / nb.reference_pump_mw;
    let sin_chain = nb.eta_wg_sin * nb.eta_grating_sin * nb.eta_det;
    let r1_sin = nb.alpha1_sin * nb.sin1_exposure * sin_chain * scale;
    let r2_sin = nb.alpha2_sin * nb.sin2_exposure * nb.gamma * nb.eta_sc * sin_chain * scale;
    let r1_fibre = nb.fibre_rate_eta_det * nb.eta_sc * nb.gamma * nb.eta_grating_fibre * scale;
    Ok(NoiseRates {
        r1_sin,
        r2_sin,
        r1_fibre,
    })
}

/// Share of the background coming from the excitation fibre.
pub fn fibre_noise_fraction(rates: &NoiseRates) -> Result<f64, BudgetError> {
    let total = rates.total();
    if !(total > 0.0) {
        return Err(BudgetError::ZeroNoise);
    }
    Ok(rates.r1_fibre / total)
}

/// Signal fraction `S/(S+N)`.
pub fn snr(signal: f64, noise: f64) -> Result<f64, BudgetError> {
    if signal < 0.0 || noise < 0.0 {
        return Err(BudgetError::InvalidArgument(
            "signal and noise must be non-negative".into(),
        ));
    }
    let total = signal + noise;
    if !(total > 0.0) {
        return Err(BudgetError::ZeroTotal);
    }
    Ok(signal / total)
}

/// Double-exponential SiN bleaching curve versus exposure at the reference power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleachState {
    pub amp_fast: f64,
    pub amp_slow: f64,
    pub tau_fast_s: f64,
    pub tau_slow_s: f64,
    pub floor: f64,
}

impl Default for BleachState {
    /// Half the fluorescence gone after 50 s and 90 % after 30 min at 2 mW.
    fn default() -> Self {
        Self::from_anchors(20.0, 600.0, (50.0, 0.5), (1800.0, 0.1)).expect("default bleaching anchors are consistent")
    }
}

impl BleachState {
    /// Solves for the two amplitudes and the floor so that the curve starts at
    /// 1 and passes exactly through both anchor points, given fixed time constants.
    pub fn from_anchors(
        tau_fast_s: f64,
        tau_slow_s: f64,
        first: (f64, f64),
        second: (f64, f64),
    ) -> Result<Self, BudgetError> {
        if !(tau_fast_s > 0.0 && tau_slow_s > 0.0) {
            return Err(BudgetError::InvalidArgument("time constants must be positive".into()));
        }
        // Rows: [e_fast, e_slow, 1] · [A_f, A_s, F] = f
        let row = |t: f64| [(-t / tau_fast_s).exp(), (-t / tau_slow_s).exp(), 1.0];
        let m = [row(0.0), row(first.0), row(second.0)];
        let rhs = [1.0, first.1, second.1];
        let det3 = |m: &[[f64; 3]; 3]| {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        };
        let d = det3(&m);
        if d.abs() < 1e-14 {
            return Err(BudgetError::InvalidArgument("anchor system is singular".into()));
        }
        let mut sol = [0.0; 3];
        for (col, out) in sol.iter_mut().enumerate() {
            let mut mc = m;
            for r in 0..3 {
                mc[r][col] = rhs[r];
            }
            *out = det3(&mc) / d;
        }
        let state = Self {
            amp_fast: sol[0],
            amp_slow: sol[1],
            tau_fast_s,
            tau_slow_s,
            floor: sol[2],
        };
        if state.amp_fast < 0.0 || state.amp_slow < 0.0 || state.floor <= 0.0 {
            return Err(BudgetError::InvalidArgument(format!(
                "anchors need negative amplitudes or floor with these time constants: {state:?}"
            )));
        }
        Ok(state)
    }
}

/// Fraction of unbleached SiN fluorescence remaining after `t` seconds at the reference power.
pub fn bleach_factor(t_exposure_s: f64, state: &BleachState) -> f64 {
    let t = t_exposure_s.max(0.0);
    state.amp_fast * (-t / state.tau_fast_s).exp() + state.amp_slow * (-t / state.tau_slow_s).exp() + state.floor
}

/// Same as [`bleach_factor`] at another pump power, assuming the damage
/// depends only on the dose `P·t`.
pub fn bleach_factor_at_power(t_exposure_s: f64, power_mw: f64, state: &BleachState) -> f64 {
    bleach_factor(t_exposure_s * power_mw / BLEACH_REFERENCE_POWER_MW, state)
}
