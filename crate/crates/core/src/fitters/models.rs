//! Model values with analytic gradients, as used by the fits.
//!
//! Gradients are written into `grad` in [`super::ModelParams::NAMES`] order.
//! A `width` of zero evaluates the model at `x`; otherwise the result is the
//! mean over `[x, x + width)`.

use crate::emitter::{G2Params, LifetimeParams, SaturationParams};

/// Mean of `e^{−|x−x0|/T}` over the bin and its derivatives in `(T, x0)`.
///
/// Bins on one side of `x0` use the difference form `e₁ − e₂` directly so
/// tail bins keep full relative precision.
fn sym_exp_mean(x: f64, width: f64, x0: f64, t: f64) -> (f64, f64, f64) {
    let u1 = x - x0;
    if width == 0.0 {
        let e = (-u1.abs() / t).exp();
        return (e, e * u1.abs() / (t * t), e * u1.signum() / t);
    }
    let u2 = u1 + width;
    if u1 >= 0.0 || u2 <= 0.0 {
        // Distances from x0 to the near and far edge; `sign` orients d/dx0.
        let (near, far, sign) = if u1 >= 0.0 { (u1, u2, 1.0) } else { (-u2, -u1, -1.0) };
        let e_near = (-near / t).exp();
        let e_far = (-far / t).exp();
        let diff = -e_near * (-(far - near) / t).exp_m1();
        let mean = t * diff / width;
        let d_t = (e_near * (1.0 + near / t) - e_far * (1.0 + far / t)) / width;
        return (mean, d_t, sign * diff / width);
    }
    // Bin straddles x0.
    let (a, b) = (-u1, u2);
    let (ea, eb) = ((-a / t).exp(), (-b / t).exp());
    let mean = t * (2.0 - ea - eb) / width;
    let d_t = (2.0 - ea * (1.0 + a / t) - eb * (1.0 + b / t)) / width;
    (mean, d_t, (ea - eb) / width)
}

pub fn g2_bin(p: &G2Params, x: f64, width: f64, grad: &mut [f64]) -> f64 {
    let (m_ge, dt_ge, dx_ge) = sym_exp_mean(x, width, p.tau_0, p.tau_ge);
    let (m_s, dt_s, dx_s) = sym_exp_mean(x, width, p.tau_0, p.tau_s);
    grad[0] = -m_ge;
    grad[1] = m_s;
    grad[2] = -p.p_ge * dt_ge;
    grad[3] = p.p_s * dt_s;
    grad[4] = -p.p_ge * dx_ge + p.p_s * dx_s;
    1.0 - p.p_ge * m_ge + p.p_s * m_s
}

/// Mean of `e^{−(x−t0)/T}` (zero before `t0`) and derivatives in `(T, t0)`.
fn decay_mean(x: f64, width: f64, t0: f64, t: f64) -> (f64, f64, f64) {
    let u1 = x - t0;
    if width == 0.0 {
        if u1 < 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let e = (-u1 / t).exp();
        return (e, e * u1 / (t * t), e / t);
    }
    let u2 = u1 + width;
    if u2 <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let near = u1.max(0.0);
    let e_near = (-near / t).exp();
    let e_far = (-u2 / t).exp();
    let diff = -e_near * (-(u2 - near) / t).exp_m1();
    let d_t = (e_near * (1.0 + near / t) - e_far * (1.0 + u2 / t)) / width;
    // Inside the bin the onset moves with t0 but the decay there starts at 1.
    let d_t0 = if u1 >= 0.0 { diff / width } else { -e_far / width };
    (t * diff / width, d_t, d_t0)
}

pub fn lifetime_bin(p: &LifetimeParams, x: f64, width: f64, grad: &mut [f64]) -> f64 {
    let (m1, dt1, dx1) = decay_mean(x, width, p.t_0, p.t_1);
    let (m2, dt2, dx2) = decay_mean(x, width, p.t_0, p.t_2);
    grad[0] = m1;
    grad[1] = m2;
    grad[2] = 1.0;
    grad[3] = p.i_1 * dt1;
    grad[4] = p.i_2 * dt2;
    grad[5] = p.i_1 * dx1 + p.i_2 * dx2;
    p.i_bias + p.i_1 * m1 + p.i_2 * m2
}

pub fn saturation_point(p: &SaturationParams, power_mw: f64, grad: &mut [f64]) -> f64 {
    let d = p.p_sat + power_mw;
    grad[0] = power_mw / d;
    grad[1] = -p.r_sat * power_mw / (d * d);
    grad[2] = power_mw;
    grad[3] = 1.0;
    p.r_sat * power_mw / d + p.a * power_mw + p.b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emitter::{analytic_g2, analytic_lifetime};

    #[test]
    fn bin_means_match_quadrature() {
        let g = G2Params {
            p_ge: 1.2,
            p_s: 0.3,
            tau_ge: 9.0,
            tau_s: 150.0,
            tau_0: 3.3,
        };
        let l = LifetimeParams {
            i_1: 100.0,
            i_2: 40.0,
            i_bias: 2.0,
            t_1: 10.0,
            t_2: 2.0,
            t_0: 1.7,
        };
        let mut grad = [0.0; 6];
        for &(x, w) in &[(-4.0, 2.0), (2.5, 2.0), (1.0, 0.5), (30.0, 4.0)] {
            let n = 20_000;
            let h = w / n as f64;
            let qg: f64 = (0..n).map(|k| analytic_g2(x + (k as f64 + 0.5) * h, &g)).sum::<f64>() / n as f64;
            let ql: f64 = (0..n)
                .map(|k| analytic_lifetime(x + (k as f64 + 0.5) * h, &l))
                .sum::<f64>()
                / n as f64;
            assert!((g2_bin(&g, x, w, &mut grad) - qg).abs() < 1e-7);
            assert!((lifetime_bin(&l, x, w, &mut grad) - ql).abs() < 1e-5);
        }
    }
}
