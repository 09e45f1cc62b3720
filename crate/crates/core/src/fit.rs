//! Small bounded Levenberg-Marquardt solver shared by the spectral and
//! curve fits. Problems here have at most a handful of parameters, so the
//! normal equations are solved densely.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease of an accepted step falls below this.
    pub cost_tolerance: f64,
    /// Stop when the infinity norm of the gradient falls below this.
    pub gradient_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            cost_tolerance: 1e-15,
            gradient_tolerance: 1e-12,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub x: Vec<f64>,
    /// Half the sum of squared residuals.
    pub cost: f64,
    pub residual_count: usize,
    pub iterations: usize,
    pub converged: bool,
}

impl LmOutcome {
    pub fn rms(&self) -> f64 {
        (2.0 * self.cost / self.residual_count.max(1) as f64).sqrt()
    }
}

/// A least-squares problem: residuals and their Jacobian (row-major,
/// `residual_count × parameter_count`).
pub trait LeastSquares {
    fn residual_count(&self) -> usize;
    fn residuals(&self, x: &[f64], out: &mut [f64]);
    fn jacobian(&self, x: &[f64], out: &mut [f64]);
}

fn cost_of(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Minimizes `½‖r(x)‖²` subject to box bounds (steps are projected).
pub fn levenberg_marquardt<P: LeastSquares>(
    problem: &P,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &LmOptions,
) -> LmOutcome {
    let n = x0.len();
    let m = problem.residual_count();
    let clamp = |x: &mut [f64]| {
        for i in 0..n {
            x[i] = x[i].clamp(lower[i], upper[i]);
        }
    };
    let mut x = x0.to_vec();
    clamp(&mut x);
    let mut r = vec![0.0; m];
    let mut jac = vec![0.0; m * n];
    problem.residuals(&x, &mut r);
    let mut cost = cost_of(&r);
    if !cost.is_finite() {
        return LmOutcome { x, cost, residual_count: m, iterations: 0, converged: false };
    }
    let mut lambda = opts.initial_damping;
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        problem.jacobian(&x, &mut jac);
        let j = DMatrix::from_row_slice(m, n, &jac);
        let jt = j.transpose();
        let jtj = &jt * &j;
        let g = &jt * DVector::from_column_slice(&r);
        // Gradient norm ignoring components pinned against a bound.
        let mut gnorm = 0.0f64;
        for i in 0..n {
            let pinned = (x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0);
            if !pinned {
                gnorm = gnorm.max(g[i].abs());
            }
        }
        if gnorm <= opts.gradient_tolerance * (1.0 + cost) {
            converged = true;
            break;
        }

        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for i in 0..n {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let step = match a.lu().solve(&(-&g)) {
                Some(s) => s,
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            for i in 0..n {
                trial[i] = x[i] + step[i];
            }
            clamp(&mut trial);
            problem.residuals(&trial, &mut r_trial);
            let c = cost_of(&r_trial);
            if c.is_finite() && c < cost {
                let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
                x.copy_from_slice(&trial);
                std::mem::swap(&mut r, &mut r_trial);
                cost = c;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if rel < opts.cost_tolerance {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // No downhill step at any damping: a (bounded) stationary point.
            converged = true;
            break;
        }
        if converged || cost == 0.0 {
            converged = true;
            break;
        }
    }

    LmOutcome { x, cost, residual_count: m, iterations, converged }
}
