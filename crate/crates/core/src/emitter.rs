//! Closed-form photophysics of a pumped three-level emitter.
//!
//! States are ground (g), excited (e) and a metastable shelving level (s).
//! The pump drives g→e at `k_exc`, the excited state decays back to g at
//! `1/tau_rad` or crosses to s at `k_es`, and s relaxes to g at `k_sg`.
//! Everything here is a pure function of immutable parameters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Blinking switches on above this multiple of the saturation power.
pub const BLINK_THRESHOLD_PSAT: f64 = 1.5;
/// Power (in units of `p_sat_mw`) at which the configured blink rates apply.
pub const BLINK_REFERENCE_PSAT: f64 = 2.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmitterError {
    #[error("pump power must be non-negative, got {0} mW")]
    NegativePower(f64),
    #[error("invalid emitter parameters: {0}")]
    InvalidParams(String),
    #[error("emitter count must be at least 1, got {0}")]
    InvalidCount(i64),
    #[error("signal fraction sigma must lie in [0, 1], got {0}")]
    SigmaOutOfRange(f64),
    #[error("degenerate decay constants ({0:e} Hz and {1:e} Hz): the two-exponential form is singular")]
    DegenerateRates(f64, f64),
    #[error("complex decay constants: the rate set gives an oscillating g2, not a sum of two exponentials")]
    OscillatoryRates,
}

/// Microscopic description of one emitter species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmitterParams {
    /// Excitation rate reached at `p_sat_mw` (Hz). Defaults to `1/tau_rad`.
    #[serde(default)]
    pub k_exc_sat: Option<f64>,
    /// Radiative lifetime of the excited state (ns).
    pub tau_rad_ns: f64,
    /// Excited → shelving rate (Hz).
    pub k_es: f64,
    /// Shelving → ground rate (Hz).
    pub k_sg: f64,
    /// Internal quantum efficiency.
    pub eta_q: f64,
    pub n_emitters: u32,
    /// Dark → bright switching rate at the blink reference power (Hz).
    pub blink_on_rate: f64,
    /// Bright → dark switching rate at the blink reference power (Hz).
    pub blink_off_rate: f64,
    pub p_sat_mw: f64,
}

impl Default for EmitterParams {
    fn default() -> Self {
        Self {
            k_exc_sat: None,
            tau_rad_ns: 10.0,
            k_es: 2.0e6,
            k_sg: 5.0e6,
            eta_q: 0.07,
            n_emitters: 1,
            blink_on_rate: 1.0 / 10.0,
            blink_off_rate: 1.0 / 30.0,
            p_sat_mw: 1.8,
        }
    }
}

impl EmitterParams {
    pub fn validate(&self) -> Result<(), EmitterError> {
        let bad = |m: &str| Err(EmitterError::InvalidParams(m.to_string()));
        if !(self.tau_rad_ns > 0.0 && self.tau_rad_ns.is_finite()) {
            return bad("tau_rad_ns must be positive");
        }
        for (name, v) in [
            ("k_es", self.k_es),
            ("k_sg", self.k_sg),
            ("blink_on_rate", self.blink_on_rate),
            ("blink_off_rate", self.blink_off_rate),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(EmitterError::InvalidParams(format!(
                    "{name} must be a non-negative rate"
                )));
            }
        }
        if let Some(k) = self.k_exc_sat {
            if !(k >= 0.0 && k.is_finite()) {
                return bad("k_exc_sat must be a non-negative rate");
            }
        }
        if !(0.0..=1.0).contains(&self.eta_q) {
            return bad("eta_q must lie in [0, 1]");
        }
        if self.n_emitters < 1 {
            return bad("n_emitters must be at least 1");
        }
        if !(self.p_sat_mw > 0.0 && self.p_sat_mw.is_finite()) {
            return bad("p_sat_mw must be positive");
        }
        Ok(())
    }

    /// Radiative decay rate `1/tau_rad` in Hz.
    pub fn k_rad(&self) -> f64 {
        1.0e9 / self.tau_rad_ns
    }

    pub fn k_exc_at_saturation(&self) -> f64 {
        self.k_exc_sat.unwrap_or_else(|| self.k_rad())
    }
}

/// Three-level autocorrelation parameters, times in ns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Params {
    pub p_ge: f64,
    pub p_s: f64,
    pub tau_ge: f64,
    pub tau_s: f64,
    pub tau_0: f64,
}

impl G2Params {
    /// Model value at the dip centre.
    pub fn g2_at_center(&self) -> f64 {
        1.0 - self.p_ge + self.p_s
    }
}

/// Bi-exponential decay with constant floor; amplitudes in counts per bin, times in ns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifetimeParams {
    #[serde(rename = "I_1")]
    pub i_1: f64,
    #[serde(rename = "I_2")]
    pub i_2: f64,
    #[serde(rename = "I_bias")]
    pub i_bias: f64,
    pub t_1: f64,
    pub t_2: f64,
    pub t_0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationParams {
    /// counts/s
    #[serde(rename = "R_sat")]
    pub r_sat: f64,
    /// mW
    #[serde(rename = "P_sat")]
    pub p_sat: f64,
    /// counts/(s·mW)
    pub a: f64,
    /// counts/s
    pub b: f64,
}

/// Pump-driven excitation rate `(1/tau_rad)·(P/P_sat)` in Hz.
pub fn excitation_rate(power_mw: f64, params: &EmitterParams) -> Result<f64, EmitterError> {
    if power_mw < 0.0 || power_mw.is_nan() {
        return Err(EmitterError::NegativePower(power_mw));
    }
    Ok(params.k_exc_at_saturation() * (power_mw / params.p_sat_mw))
}

pub fn analytic_lifetime(t_ns: f64, p: &LifetimeParams) -> f64 {
    if t_ns < p.t_0 {
        return p.i_bias;
    }
    let dt = t_ns - p.t_0;
    p.i_1 * (-dt / p.t_1).exp() + p.i_2 * (-dt / p.t_2).exp() + p.i_bias
}

pub fn analytic_saturation(power_mw: f64, p: &SaturationParams) -> f64 {
    p.r_sat * power_mw / (p.p_sat + power_mw) + p.a * power_mw + p.b
}

/// Symmetrised three-level g²(τ); τ in ns.
pub fn analytic_g2(tau_ns: f64, p: &G2Params) -> f64 {
    let d = (tau_ns - p.tau_0).abs();
    1.0 - p.p_ge * (-d / p.tau_ge).exp() + p.p_s * (-d / p.tau_s).exp()
}

/// Zero-delay autocorrelation of `n` identical independent emitters.
pub fn g2_zero_multi(n: i64) -> Result<f64, EmitterError> {
    if n < 1 {
        return Err(EmitterError::InvalidCount(n));
    }
    Ok(1.0 - 1.0 / n as f64)
}

/// Mixes uncorrelated Poissonian background into a background-free g².
pub fn background_degrade(g2: f64, sigma: f64) -> Result<f64, EmitterError> {
    if !(0.0..=1.0).contains(&sigma) {
        return Err(EmitterError::SigmaOutOfRange(sigma));
    }
    let s2 = sigma * sigma;
    Ok(1.0 - s2 + s2 * g2)
}

/// Steady-state populations `(g, e, s)` under pump rate `k_exc` (Hz).
pub fn steady_state_populations(params: &EmitterParams, k_exc: f64) -> (f64, f64, f64) {
    if k_exc <= 0.0 {
        return (1.0, 0.0, 0.0);
    }
    let k_r = params.k_rad();
    let (k_es, k_sg) = (params.k_es, params.k_sg);
    if k_es == 0.0 {
        let denom = k_exc + k_r;
        return (k_r / denom, k_exc / denom, 0.0);
    }
    if k_sg == 0.0 {
        // Everything eventually piles up in the shelving state.
        return (0.0, 0.0, 1.0);
    }
    let denom = k_exc * k_es + k_exc * k_sg + k_r * k_sg + k_es * k_sg;
    let e = k_exc * k_sg / denom;
    let g = e * (k_r + k_es) / k_exc;
    let s = e * k_es / k_sg;
    (g, e, s)
}

/// Rate of excited→ground decays (Hz) in steady state at pump power `P`.
/// Multiply by the efficiency chain to get a detected rate.
pub fn steady_state_decay_rate(params: &EmitterParams, power_mw: f64) -> Result<f64, EmitterError> {
    let k_exc = excitation_rate(power_mw, params)?;
    let (_, e, _) = steady_state_populations(params, k_exc);
    Ok(e * params.k_rad())
}

/// Telegraph switching rates `(bright→dark, dark→bright)` at pump power `P`,
/// or `None` when blinking is inactive.
///
/// Rates are zero up to `BLINK_THRESHOLD_PSAT·P_sat` and grow linearly above it,
/// reaching the configured values at `BLINK_REFERENCE_PSAT·P_sat`.
pub fn blink_rates(params: &EmitterParams, power_mw: f64) -> Option<(f64, f64)> {
    let x = power_mw / params.p_sat_mw;
    if x <= BLINK_THRESHOLD_PSAT || params.blink_off_rate <= 0.0 {
        return None;
    }
    let scale = (x - BLINK_THRESHOLD_PSAT) / (BLINK_REFERENCE_PSAT - BLINK_THRESHOLD_PSAT);
    let off = params.blink_off_rate * scale;
    let on = params.blink_on_rate * scale;
    Some((off, on))
}

/// Long-run fraction of time spent bright.
pub fn bright_fraction(params: &EmitterParams, power_mw: f64) -> f64 {
    match blink_rates(params, power_mw) {
        None => 1.0,
        Some((off, on)) => on / (on + off),
    }
}

/// Maps microscopic rates at pump `P` onto the two-exponential g² form.
///
/// Starting from the ground state right after a photon, the excited-state
/// population relaxes as `e_ss + c_f·exp(λ_f τ) + c_s·exp(λ_s τ)` with λ the
/// non-zero eigenvalues of the rate matrix. Normalising by `e_ss` gives
/// `p_ge = -c_f/e_ss` and `p_s = c_s/e_ss`. `tau_0` is left at zero.
pub fn rates_to_g2_params(params: &EmitterParams, power_mw: f64) -> Result<G2Params, EmitterError> {
    params.validate()?;
    let k_exc = excitation_rate(power_mw, params)?;
    let k_r = params.k_rad();
    let (k_es, k_sg) = (params.k_es, params.k_sg);
    if k_exc <= 0.0 {
        return Err(EmitterError::InvalidParams("pump rate is zero, g2 is undefined".into()));
    }

    if k_es == 0.0 {
        let tau_ge = 1.0e9 / (k_exc + k_r);
        let tau_s = if k_sg > 0.0 { 1.0e9 / k_sg } else { tau_ge };
        return Ok(G2Params {
            p_ge: 1.0,
            p_s: 0.0,
            tau_ge,
            tau_s,
            tau_0: 0.0,
        });
    }
    if k_sg == 0.0 {
        return Err(EmitterError::InvalidParams(
            "k_sg = 0 with k_es > 0 traps the emitter in the shelving state".into(),
        ));
    }

    // λ² + bλ + c = 0 for the two non-trivial eigenvalues.
    let b = k_exc + k_r + k_es + k_sg;
    let c = k_exc * k_es + k_exc * k_sg + k_r * k_sg + k_es * k_sg;
    let disc = b * b - 4.0 * c;
    if disc < 0.0 {
        return Err(EmitterError::OscillatoryRates);
    }
    let sq = disc.sqrt();
    // Numerically stable pair of roots, both negative.
    let q = -0.5 * (b + sq);
    let lam_fast = q;
    let lam_slow = c / q;
    if sq <= 1e-9 * b {
        return Err(EmitterError::DegenerateRates(-lam_fast, -lam_slow));
    }

    let e_ss = k_exc * k_sg / c;
    // e(0) = 0 and e'(0) = k_exc fix the two amplitudes.
    let c_fast = (k_exc + e_ss * lam_slow) / (lam_fast - lam_slow);
    let c_slow = -e_ss - c_fast;
    Ok(G2Params {
        p_ge: -c_fast / e_ss,
        p_s: c_slow / e_ss,
        tau_ge: -1.0e9 / lam_fast,
        tau_s: -1.0e9 / lam_slow,
        tau_0: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_level(tau_rad_ns: f64, p_sat: f64) -> EmitterParams {
        EmitterParams {
            tau_rad_ns,
            k_es: 0.0,
            k_sg: 0.0,
            p_sat_mw: p_sat,
            ..EmitterParams::default()
        }
    }

    #[test]
    fn excitation_rate_examples() {
        let p = two_level(10.0, 3.0);
        assert_eq!(excitation_rate(0.0, &p).unwrap(), 0.0);
        assert!((excitation_rate(3.0, &p).unwrap() - 1.0e8).abs() < 1e-3);
        assert!((excitation_rate(6.0, &p).unwrap() - 2.0e8).abs() < 1e-3);
        assert!(matches!(excitation_rate(-1.0, &p), Err(EmitterError::NegativePower(_))));
    }

    #[test]
    fn lifetime_examples() {
        let p = LifetimeParams {
            i_1: 1.0,
            i_2: 0.0,
            i_bias: 0.0,
            t_1: 10.0,
            t_2: 2.0,
            t_0: 5.0,
        };
        assert!((analytic_lifetime(15.0, &p) - (-1.0f64).exp()).abs() < 1e-15);
        let q = LifetimeParams {
            i_2: 3.0,
            i_bias: 0.5,
            ..p
        };
        assert_eq!(analytic_lifetime(5.0, &q), 1.0 + 3.0 + 0.5);
        assert_eq!(analytic_lifetime(4.0, &q), 0.5);
        assert!((analytic_lifetime(1e6, &q) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn saturation_examples() {
        let p = SaturationParams {
            r_sat: 2600.0,
            p_sat: 1.8,
            a: 10.0,
            b: 350.0,
        };
        assert_eq!(analytic_saturation(0.0, &p), 350.0);
        assert!((analytic_saturation(1.8, &p) - (1300.0 + 18.0 + 350.0)).abs() < 1e-9);
        let bare = SaturationParams { a: 0.0, b: 0.0, ..p };
        assert!((analytic_saturation(1e12, &bare) - 2600.0).abs() < 1e-6);
    }

    #[test]
    fn g2_examples() {
        let p = G2Params {
            p_ge: 0.8,
            p_s: 0.3,
            tau_ge: 11.0,
            tau_s: 186.0,
            tau_0: 48.0,
        };
        assert!((analytic_g2(48.0, &p) - 0.5).abs() < 1e-15);
        assert!((analytic_g2(1e7, &p) - 1.0).abs() < 1e-12);
        assert!((analytic_g2(-1e7, &p) - 1.0).abs() < 1e-12);
        assert_eq!(analytic_g2(48.0 + 7.0, &p), analytic_g2(48.0 - 7.0, &p));
        let ideal = G2Params {
            p_ge: 1.0,
            p_s: 0.0,
            ..p
        };
        assert_eq!(analytic_g2(48.0, &ideal), 0.0);
    }

    #[test]
    fn multi_emitter_rule() {
        assert_eq!(g2_zero_multi(1).unwrap(), 0.0);
        assert_eq!(g2_zero_multi(2).unwrap(), 0.5);
        assert_eq!(g2_zero_multi(4).unwrap(), 0.75);
        assert!(g2_zero_multi(0).is_err());
    }

    #[test]
    fn background_examples() {
        assert_eq!(background_degrade(0.3, 1.0).unwrap(), 0.3);
        assert!((background_degrade(0.0, 0.42).unwrap() - 0.8236).abs() < 1e-12);
        assert!((background_degrade(0.48, 0.42).unwrap() - 0.908272).abs() < 1e-12);
        assert!(background_degrade(0.5, 1.2).is_err());
        assert!(background_degrade(0.5, -0.1).is_err());
    }

    #[test]
    fn two_level_limit() {
        let p = two_level(10.0, 1.8);
        let g = rates_to_g2_params(&p, 1.8).unwrap();
        assert_eq!(g.p_s, 0.0);
        assert_eq!(g.p_ge, 1.0);
        assert!((g.tau_ge - 5.0).abs() < 1e-12);
    }

    #[test]
    fn shelving_rates_reproduce_measured_constants() {
        // tau_ge = 11 ns is above any fast constant reachable with a 10 ns
        // radiative lifetime, so this uses 12 ns.
        let p = EmitterParams {
            tau_rad_ns: 12.0,
            k_es: 2.0e6,
            k_sg: 5.243058e6,
            p_sat_mw: 1.8,
            ..EmitterParams::default()
        };
        let power = 0.068_508_52 * 1.8;
        let g = rates_to_g2_params(&p, power).unwrap();
        assert!((g.tau_ge - 11.0).abs() < 0.01, "{g:?}");
        assert!((g.tau_s - 186.0).abs() < 0.2, "{g:?}");
        assert!((g.g2_at_center()).abs() < 1e-12);
        assert!(g.p_s > 0.0);
    }

    #[test]
    fn oscillatory_rates_rejected() {
        // Negligible radiative decay with a = c = d makes b² < 4c.
        let p = EmitterParams {
            tau_rad_ns: 1e12,
            k_es: 1.0,
            k_sg: 1.0,
            k_exc_sat: Some(1.0),
            p_sat_mw: 1.0,
            ..EmitterParams::default()
        };
        assert_eq!(rates_to_g2_params(&p, 1.0), Err(EmitterError::OscillatoryRates));
    }

    #[test]
    fn degenerate_rates_rejected() {
        // All four rates equal to 1 Hz: b = 4, c = 4, b² - 4c = 0.
        let p = EmitterParams {
            tau_rad_ns: 1e9,
            k_es: 1.0,
            k_sg: 1.0,
            k_exc_sat: Some(1.0),
            p_sat_mw: 1.0,
            ..EmitterParams::default()
        };
        assert!(matches!(
            rates_to_g2_params(&p, 1.0),
            Err(EmitterError::DegenerateRates(..))
        ));
    }

    #[test]
    fn blinking_threshold() {
        let p = EmitterParams::default();
        assert!(blink_rates(&p, 1.5 * p.p_sat_mw).is_none());
        let (off, on) = blink_rates(&p, 2.0 * p.p_sat_mw).unwrap();
        assert!((off - 1.0 / 30.0).abs() < 1e-15);
        assert!((on - 1.0 / 10.0).abs() < 1e-15);
        let (off3, _) = blink_rates(&p, 3.0 * p.p_sat_mw).unwrap();
        assert!((off3 - 3.0 / 30.0).abs() < 1e-12);
        assert!((bright_fraction(&p, 2.0 * p.p_sat_mw) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn steady_state_sums_to_one() {
        let p = EmitterParams::default();
        for power in [0.1, 1.0, 6.0, 30.0] {
            let k = excitation_rate(power, &p).unwrap();
            let (g, e, s) = steady_state_populations(&p, k);
            assert!((g + e + s - 1.0).abs() < 1e-12);
        }
        let two = two_level(10.0, 1.8);
        let r = steady_state_decay_rate(&two, 1.8).unwrap();
        assert!((r - 0.5e8).abs() < 1e-3);
    }
}
