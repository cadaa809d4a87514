//! Bounded Levenberg–Marquardt with Marquardt diagonal scaling.
//!
//! Bounds are handled by projection: a parameter sitting on a bound whose
//! gradient points outward is frozen for that step, and every trial point is
//! clamped back into the box.

use nalgebra::{DMatrix, DVector};

pub const MAX_ITERATIONS: usize = 200;
pub const PARAM_TOLERANCE: f64 = 1e-8;
const LAMBDA_START: f64 = 1e-3;
const LAMBDA_MAX: f64 = 1e16;

pub(crate) struct Problem<'a, F> {
    pub y: &'a [f64],
    pub sigma: &'a [f64],
    /// `model(params, point_index, grad_out) -> value`.
    pub model: F,
    pub lower: &'a [f64],
    pub upper: &'a [f64],
    pub free: &'a [bool],
}

#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub params: Vec<f64>,
    /// Full-size covariance; rows and columns of fixed parameters are zero.
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Eval {
    chi2: f64,
    r: DVector<f64>,
    jac: DMatrix<f64>,
}

impl<F> Problem<'_, F>
where
    F: Fn(&[f64], usize, &mut [f64]) -> f64,
{
    fn eval(&self, p: &[f64], active: &[usize]) -> Eval {
        let n = self.y.len();
        let mut r = DVector::zeros(n);
        let mut jac = DMatrix::zeros(n, active.len());
        let mut grad = vec![0.0; p.len()];
        for i in 0..n {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let f = (self.model)(p, i, &mut grad);
            let w = 1.0 / self.sigma[i];
            r[i] = (self.y[i] - f) * w;
            for (c, &j) in active.iter().enumerate() {
                jac[(i, c)] = grad[j] * w;
            }
        }
        Eval {
            chi2: r.norm_squared(),
            r,
            jac,
        }
    }

    fn clamp(&self, p: &mut [f64]) {
        for (j, v) in p.iter_mut().enumerate() {
            *v = v.clamp(self.lower[j], self.upper[j]);
        }
    }

    pub fn solve(&self, p0: &[f64]) -> Solution {
        let active: Vec<usize> = (0..p0.len()).filter(|&j| self.free[j]).collect();
        let mut p = p0.to_vec();
        self.clamp(&mut p);
        let mut cur = self.eval(&p, &active);
        let mut lambda = LAMBDA_START;
        let mut iterations = 0;
        let mut converged = false;

        'outer: while iterations < MAX_ITERATIONS {
            let jtj = cur.jac.transpose() * &cur.jac;
            let g = cur.jac.transpose() * &cur.r;
            // Freeze parameters pinned against a bound by the descent direction.
            let step_set: Vec<usize> = (0..active.len())
                .filter(|&c| {
                    let j = active[c];
                    !((p[j] <= self.lower[j] && g[c] < 0.0) || (p[j] >= self.upper[j] && g[c] > 0.0))
                })
                .collect();
            if step_set.is_empty() {
                converged = true;
                break;
            }
            let k = step_set.len();
            loop {
                let mut a = DMatrix::zeros(k, k);
                let mut b = DVector::zeros(k);
                for (x, &cx) in step_set.iter().enumerate() {
                    b[x] = g[cx];
                    for (z, &cz) in step_set.iter().enumerate() {
                        a[(x, z)] = jtj[(cx, cz)];
                    }
                    let d = jtj[(cx, cx)];
                    a[(x, x)] += lambda * if d > 0.0 { d } else { 1.0 };
                }
                let delta = match a.cholesky() {
                    Some(ch) => ch.solve(&b),
                    None => {
                        lambda *= 10.0;
                        if lambda > LAMBDA_MAX {
                            break 'outer;
                        }
                        continue;
                    }
                };
                let mut trial = p.clone();
                for (x, &c) in step_set.iter().enumerate() {
                    trial[active[c]] += delta[x];
                }
                self.clamp(&mut trial);
                let next = self.eval(&trial, &active);
                if next.chi2.is_finite() && next.chi2 <= cur.chi2 {
                    let small_step = active
                        .iter()
                        .all(|&j| (trial[j] - p[j]).abs() <= PARAM_TOLERANCE * (p[j].abs() + PARAM_TOLERANCE));
                    let stalled = cur.chi2 - next.chi2 <= 1e-15 * cur.chi2;
                    p = trial;
                    cur = next;
                    lambda = (lambda / 10.0).max(1e-12);
                    iterations += 1;
                    if small_step || stalled {
                        converged = true;
                        break 'outer;
                    }
                    break;
                }
                lambda *= 10.0;
                if lambda > LAMBDA_MAX {
                    // No descent left at machine precision: a minimum.
                    converged = true;
                    break 'outer;
                }
            }
        }

        let jtj = cur.jac.transpose() * &cur.jac;
        let cov_active = jtj
            .clone()
            .pseudo_inverse(1e-12 * jtj.diagonal().max().max(f64::MIN_POSITIVE))
            .unwrap_or_else(|_| DMatrix::from_element(active.len(), active.len(), f64::NAN));
        let mut covariance = DMatrix::zeros(p.len(), p.len());
        for (x, &jx) in active.iter().enumerate() {
            for (z, &jz) in active.iter().enumerate() {
                covariance[(jx, jz)] = cov_active[(x, z)];
            }
        }
        Solution {
            params: p,
            covariance,
            chi2: cur.chi2,
            iterations,
            converged,
        }
    }
}
