//! Deterministic limited-memory BFGS minimization.
//!
//! Shared by the likelihood-based inference routines. The implementation is
//! the standard two-loop recursion with an Armijo backtracking line search;
//! all arithmetic is sequential, so results are bit-reproducible for a given
//! objective.

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    /// Number of curvature pairs kept.
    pub memory: usize,
    pub max_iters: usize,
    /// Convergence threshold on the gradient infinity norm.
    pub grad_tol: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iters: 500,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: DVector<f64>,
    pub f: f64,
    /// Infinity norm of the gradient at `x`.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Minimize `f` starting from `x0`. `eval` writes the gradient into its
/// second argument and returns the objective value.
pub fn minimize_lbfgs<F>(
    x0: DVector<f64>,
    mut eval: F,
    opts: &LbfgsOptions,
) -> Result<LbfgsOutcome>
where
    F: FnMut(&DVector<f64>, &mut DVector<f64>) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut grad = DVector::zeros(n);
    let mut f = eval(&x, &mut grad);
    if !f.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Domain(
            "objective or gradient not finite at the starting point".into(),
        ));
    }

    let mut s_hist: Vec<DVector<f64>> = Vec::new();
    let mut y_hist: Vec<DVector<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();
    let mut alpha = vec![0.0f64; opts.memory];

    let mut iterations = 0;
    while iterations < opts.max_iters {
        let gnorm = grad.amax();
        if gnorm <= opts.grad_tol {
            return Ok(LbfgsOutcome {
                x,
                f,
                grad_norm: gnorm,
                iterations,
                converged: true,
            });
        }

        // Two-loop recursion for the search direction d = -H grad.
        let mut q = grad.clone();
        for (k, ((s, y), rho)) in s_hist
            .iter()
            .zip(y_hist.iter())
            .zip(rho_hist.iter())
            .enumerate()
            .rev()
        {
            alpha[k] = rho * s.dot(&q);
            q.axpy(-alpha[k], y, 1.0);
        }
        if let (Some(s), Some(y)) = (s_hist.last(), y_hist.last()) {
            let scale = s.dot(y) / y.dot(y);
            q *= scale;
        }
        for (k, ((s, y), rho)) in s_hist
            .iter()
            .zip(y_hist.iter())
            .zip(rho_hist.iter())
            .enumerate()
        {
            let beta = rho * y.dot(&q);
            q.axpy(alpha[k] - beta, s, 1.0);
        }
        let mut dir = -q;
        let mut dg = dir.dot(&grad);
        if !(dg < 0.0) {
            // Curvature information is unusable; fall back to steepest
            // descent for this iteration.
            dir = -grad.clone();
            dg = -grad.dot(&grad);
        }

        // Armijo backtracking.
        let mut step = 1.0f64;
        let c1 = 1e-4;
        let mut new_grad = DVector::zeros(n);
        let mut accepted = false;
        let mut x_new = x.clone();
        let mut f_new = f;
        for _ in 0..60 {
            x_new = &x + &dir * step;
            f_new = eval(&x_new, &mut new_grad);
            if f_new.is_finite() && f_new <= f + c1 * step * dg {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // The direction gives no decrease at representable step sizes:
            // report where we stopped.
            return Ok(LbfgsOutcome {
                x,
                f,
                grad_norm: gnorm,
                iterations,
                converged: false,
            });
        }

        let s_vec = &x_new - &x;
        let y_vec = &new_grad - &grad;
        let sy = s_vec.dot(&y_vec);
        if sy > 1e-10 * s_vec.norm() * y_vec.norm() {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            rho_hist.push(1.0 / sy);
            s_hist.push(s_vec);
            y_hist.push(y_vec);
        }
        x = x_new;
        f = f_new;
        grad = new_grad;
        iterations += 1;
    }

    let gnorm = grad.amax();
    let converged = gnorm <= opts.grad_tol;
    Ok(LbfgsOutcome {
        x,
        f,
        grad_norm: gnorm,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl_minimized_to_high_precision() {
        // f(x) = sum_i w_i (x_i - a_i)^2 with distinct curvatures.
        let a = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let w = [1.0, 4.0, 0.5, 10.0];
        let out = minimize_lbfgs(
            DVector::zeros(4),
            |x, g| {
                let mut f = 0.0;
                for i in 0..4 {
                    let d = x[i] - a[i];
                    f += w[i] * d * d;
                    g[i] = 2.0 * w[i] * d;
                }
                f
            },
            &LbfgsOptions {
                grad_tol: 1e-10,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(out.converged);
        assert!((out.x - a).amax() < 1e-9);
        assert!(out.iterations < 50);
    }

    #[test]
    fn rosenbrock_reaches_the_global_minimum() {
        let out = minimize_lbfgs(
            DVector::from_vec(vec![-1.2, 1.0]),
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -400.0 * a * (b - a * a) - 2.0 * (1.0 - a);
                g[1] = 200.0 * (b - a * a);
                100.0 * (b - a * a).powi(2) + (1.0 - a).powi(2)
            },
            &LbfgsOptions {
                grad_tol: 1e-8,
                max_iters: 2000,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(out.converged, "grad norm {}", out.grad_norm);
        assert!((out.x[0] - 1.0).abs() < 1e-6);
        assert!((out.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn iteration_budget_is_respected() {
        let out = minimize_lbfgs(
            DVector::from_vec(vec![-1.2, 1.0]),
            |x, g| {
                let (a, b) = (x[0], x[1]);
                g[0] = -400.0 * a * (b - a * a) - 2.0 * (1.0 - a);
                g[1] = 200.0 * (b - a * a);
                100.0 * (b - a * a).powi(2) + (1.0 - a).powi(2)
            },
            &LbfgsOptions {
                grad_tol: 1e-12,
                max_iters: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 3);
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let res = minimize_lbfgs(
            DVector::from_vec(vec![0.0]),
            |_x, g| {
                g[0] = 0.0;
                f64::NAN
            },
            &LbfgsOptions::default(),
        );
        assert!(res.is_err());
    }
}
