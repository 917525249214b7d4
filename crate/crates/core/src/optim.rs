//! Barzilai–Borwein gradient descent with a monotone backtracking safeguard.
//!
//! Every accepted iterate satisfies an Armijo decrease, so the recorded
//! objective history is nonincreasing.

use serde::{Deserialize, Serialize};

use crate::util::{dot, max_abs};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DescentOptions {
    /// Stop once the max-norm of the (projected) gradient drops below this.
    pub tol: f64,
    pub max_iter: usize,
    pub initial_step: f64,
    pub max_step: f64,
    pub armijo: f64,
    /// Keep the objective value of every accepted iterate.
    pub record_history: bool,
}

impl Default for DescentOptions {
    fn default() -> Self {
        DescentOptions {
            tol: 1e-8,
            max_iter: 200_000,
            initial_step: 1e-3,
            max_step: 1e6,
            armijo: 1e-4,
            record_history: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DescentOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_max: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Stopped because the objective no longer decreased in floating point.
    pub stalled: bool,
    pub history: Vec<f64>,
}

/// How gradients become descent directions.
pub trait Geometry {
    /// Writes the descent direction for gradient `g` at `x` into `dir`: a
    /// symmetric positive semidefinite operator applied to `g`, typically a
    /// preconditioner composed with a projection onto admissible directions.
    fn direction(&mut self, x: &[f64], g: &[f64], dir: &mut [f64]);

    /// Stationarity measure compared against `tol`.
    fn stationarity(&self, g: &[f64], _dir: &[f64]) -> f64 {
        max_abs(g)
    }
}

/// Plain gradient directions.
pub struct Euclidean;

impl Geometry for Euclidean {
    fn direction(&mut self, _x: &[f64], g: &[f64], dir: &mut [f64]) {
        dir.copy_from_slice(g);
    }
}

/// Minimizes `objective`, which writes the gradient into its second argument
/// and returns the value. Steps are Barzilai–Borwein lengths measured in
/// the preconditioner's metric, shortened until the Armijo condition holds.
pub fn minimize<F, G>(x0: Vec<f64>, mut objective: F, geometry: &mut G, opts: &DescentOptions) -> DescentOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
    G: Geometry + ?Sized,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = objective(&x, &mut g);
    let mut dir = vec![0.0; n];
    geometry.direction(&x, &g, &mut dir);

    let mut history = Vec::new();
    if opts.record_history {
        history.push(fx);
    }
    let mut step = opts.initial_step;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut dir_new = vec![0.0; n];
    let mut iterations = 0;
    let mut gmax = geometry.stationarity(&g, &dir);
    let mut converged = gmax < opts.tol;
    let mut stalled = false;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let slope = dot(&g, &dir);
        if !(slope > 0.0) {
            stalled = true;
            break;
        }
        let mut alpha = step;
        let mut accepted = false;
        let f_old = fx;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] - alpha * dir[i];
            }
            let f_new = objective(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx - opts.armijo * alpha * slope {
                fx = f_new;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            stalled = true;
            break;
        }
        geometry.direction(&x_new, &g_new, &mut dir_new);

        // BB1 in the preconditioner metric: s.P.s / s.y with P s = -alpha g
        let ss = alpha * alpha * slope;
        let sy: f64 = (0..n).map(|i| -alpha * dir[i] * (g_new[i] - g[i])).sum();
        step = if sy > 0.0 {
            (ss / sy).clamp(1e-12, opts.max_step)
        } else {
            (2.0 * alpha).min(opts.max_step)
        };

        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        std::mem::swap(&mut dir, &mut dir_new);
        if opts.record_history {
            history.push(fx);
        }
        gmax = geometry.stationarity(&g, &dir);
        converged = gmax < opts.tol;
        if !converged && fx >= f_old {
            stalled = true;
            break;
        }
    }

    DescentOutcome {
        x,
        value: fx,
        grad_max: gmax,
        iterations,
        converged,
        stalled,
        history,
    }
}

/// Solves the tridiagonal system `(sub, diag, sup) x = rhs` in place
/// (Thomas algorithm). `sub[0]` and `sup[n-1]` are ignored.
pub(crate) fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64], work: &mut Vec<f64>) {
    let n = rhs.len();
    work.clear();
    work.resize(n, 0.0);
    let mut beta = diag[0];
    rhs[0] /= beta;
    for i in 1..n {
        work[i] = sup[i - 1] / beta;
        beta = diag[i] - sub[i] * work[i];
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= work[i + 1] * rhs[i + 1];
    }
}
