//! The closed-form g² mapping against a direct solution of the rate equations.

use nalgebra::{Matrix3, Vector3};
use nvlink_core::emitter::{analytic_g2, excitation_rate, rates_to_g2_params, steady_state_populations, EmitterParams};

/// Excited-state population at `t` seconds, starting in the ground state.
fn excited_population(p: &EmitterParams, k_exc: f64, t: f64) -> f64 {
    let k_r = p.k_rad();
    // d/dt (g, e, s)
    let q = Matrix3::new(-k_exc, k_r, p.k_sg, k_exc, -(k_r + p.k_es), 0.0, 0.0, p.k_es, -p.k_sg);
    ((q * t).exp() * Vector3::new(1.0, 0.0, 0.0))[1]
}

#[test]
fn g2_mapping_matches_rate_equations() {
    let cases = [
        (EmitterParams::default(), 1.8),
        (EmitterParams::default(), 0.3),
        (
            EmitterParams {
                tau_rad_ns: 12.0,
                k_es: 2.0e6,
                k_sg: 5.243058e6,
                ..EmitterParams::default()
            },
            0.06850852 * 1.8,
        ),
        (
            EmitterParams {
                k_es: 1.0e7,
                k_sg: 1.0e6,
                ..EmitterParams::default()
            },
            7.0,
        ),
    ];
    for (p, power) in cases {
        let k_exc = excitation_rate(power, &p).unwrap();
        let e_ss = steady_state_populations(&p, k_exc).1;
        let g2 = rates_to_g2_params(&p, power).unwrap();
        for i in 0..50 {
            let tau_ns = i as f64 * 20.0;
            let direct = excited_population(&p, k_exc, tau_ns * 1e-9) / e_ss;
            let closed = analytic_g2(tau_ns, &g2);
            assert!((direct - closed).abs() < 1e-6, "τ = {tau_ns} ns: {direct} vs {closed}");
        }
    }
}

#[test]
fn steady_state_is_stationary() {
    let p = EmitterParams::default();
    let k_exc = excitation_rate(4.0, &p).unwrap();
    let (g, e, s) = steady_state_populations(&p, k_exc);
    assert!((g + e + s - 1.0).abs() < 1e-12);
    // Long-time limit of the dynamics from the ground state.
    assert!((excited_population(&p, k_exc, 1e-3) - e).abs() < 1e-9);
}
