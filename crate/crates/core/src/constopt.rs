//! Local refinement of the numeric constants inside a fixed expression.
//!
//! Descent runs BFGS with backtracking on a Huber-smoothed pinball loss;
//! gradients come from central finite differences. Candidates are ranked
//! with the exact pinball loss, and the input constants are returned when
//! nothing beats them.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::expr::{EvalScratch, Expr};
use crate::loss::{mean_pinball_unchecked, target_range, QuantileLevel};
use crate::matrix::Matrix;

/// Smoothing band relative to the target range.
const SMOOTHING: f64 = 1e-6;
const GRADIENT_TOLERANCE: f64 = 1e-8;
const MAX_BACKTRACKS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstOptOptions {
    /// Quasi-Newton steps per start.
    pub iterations: usize,
    /// Perturbed starts in addition to the initial constants.
    pub nrestarts: usize,
    /// Standard deviation of the multiplicative restart noise.
    pub perturbation: f64,
    /// Relative finite-difference step.
    pub step: f64,
}

impl Default for ConstOptOptions {
    fn default() -> Self {
        Self {
            iterations: 8,
            nrestarts: 2,
            perturbation: 0.076,
            step: 1e-6,
        }
    }
}

/// Huberized pinball of one residual `r = y - yhat` with band `delta`.
/// Continuous with continuous derivative; differs from the exact loss by at
/// most `delta / 2` per row.
#[inline]
pub fn smoothed_pinball(tau: f64, r: f64, delta: f64) -> f64 {
    if r > delta {
        tau * (r - 0.5 * delta)
    } else if r < -delta {
        (1.0 - tau) * (-r - 0.5 * delta)
    } else if r >= 0.0 {
        tau * r * r / (2.0 * delta)
    } else {
        (1.0 - tau) * r * r / (2.0 * delta)
    }
}

/// Objective shared by the descent and the gradient.
struct Objective<'a> {
    expr: &'a Expr,
    x: &'a Matrix,
    y: &'a [f64],
    tau: f64,
    delta: f64,
    scratch: EvalScratch,
}

impl<'a> Objective<'a> {
    fn new(expr: &'a Expr, x: &'a Matrix, y: &'a [f64], tau: QuantileLevel) -> Self {
        let range = target_range(y);
        let delta = if range > 0.0 { SMOOTHING * range } else { SMOOTHING };
        Self {
            expr,
            x,
            y,
            tau: tau.value(),
            delta,
            scratch: EvalScratch::new(),
        }
    }

    fn predict(&mut self, c: &[f64]) -> Option<Vec<f64>> {
        let e = self.expr.with_constants(c);
        self.scratch.eval_finite(&e, self.x)
    }

    fn smoothed(&mut self, c: &[f64]) -> f64 {
        let Some(yhat) = self.predict(c) else {
            return f64::INFINITY;
        };
        let total: f64 = self
            .y
            .iter()
            .zip(&yhat)
            .map(|(&a, &b)| smoothed_pinball(self.tau, a - b, self.delta))
            .sum();
        self.scratch.give(yhat);
        let v = total / self.y.len() as f64;
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }

    fn exact(&mut self, c: &[f64]) -> f64 {
        let Some(yhat) = self.predict(c) else {
            return f64::INFINITY;
        };
        let v = mean_pinball_unchecked(QuantileLevel::new(self.tau).expect("valid"), self.y, &yhat);
        self.scratch.give(yhat);
        v
    }

    /// Central differences with step `h * max(1, |c_i|)`.
    fn gradient(&mut self, c: &[f64], h: f64) -> Vec<f64> {
        let mut point = c.to_vec();
        let mut g = Vec::with_capacity(c.len());
        for i in 0..c.len() {
            let hi = h * c[i].abs().max(1.0);
            point[i] = c[i] + hi;
            let up = self.smoothed(&point);
            point[i] = c[i] - hi;
            let down = self.smoothed(&point);
            point[i] = c[i];
            let d = (up - down) / (2.0 * hi);
            g.push(if d.is_finite() { d } else { f64::NAN });
        }
        g
    }
}

/// Finite-difference gradient of the mean Huberized pinball loss with
/// respect to `constants` (in the expression's left-to-right order).
pub fn smoothed_pinball_gradient(
    expr: &Expr,
    constants: &[f64],
    x: &Matrix,
    y: &[f64],
    tau: QuantileLevel,
    h: f64,
) -> Vec<f64> {
    Objective::new(expr, x, y, tau).gradient(constants, h)
}

/// Mean Huberized pinball loss of `expr` with the given constants.
pub fn smoothed_loss(expr: &Expr, constants: &[f64], x: &Matrix, y: &[f64], tau: QuantileLevel) -> f64 {
    Objective::new(expr, x, y, tau).smoothed(constants)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// BFGS with Armijo backtracking; the inverse-Hessian update is skipped
/// whenever the curvature condition fails.
fn bfgs(obj: &mut Objective<'_>, start: &[f64], iterations: usize, h: f64) -> Vec<f64> {
    let p = start.len();
    let mut c = start.to_vec();
    let mut f = obj.smoothed(&c);
    if !f.is_finite() {
        return c;
    }
    let mut g = obj.gradient(&c, h);
    let mut hinv = identity(p);
    let mut scaled = false;
    for _ in 0..iterations {
        if g.iter().any(|v| !v.is_finite()) || norm(&g) < GRADIENT_TOLERANCE {
            break;
        }
        let mut dir: Vec<f64> = (0..p).map(|i| -dot(&hinv[i], &g)).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            hinv = identity(p);
            dir = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Vec<f64> = c.iter().zip(&dir).map(|(a, d)| a + alpha * d).collect();
            let ft = obj.smoothed(&trial);
            if ft <= f + 1e-4 * alpha * slope {
                accepted = Some((trial, ft));
                break;
            }
            alpha *= 0.5;
        }
        let Some((next, fnext)) = accepted else {
            break;
        };
        let gnext = obj.gradient(&next, h);
        let s: Vec<f64> = next.iter().zip(&c).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gnext.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * norm(&s) * norm(&yv) && sy.is_finite() {
            if !scaled {
                let gamma = sy / dot(&yv, &yv);
                for (i, row) in hinv.iter_mut().enumerate() {
                    row.iter_mut().for_each(|v| *v = 0.0);
                    row[i] = gamma;
                }
                scaled = true;
            }
            update_inverse_hessian(&mut hinv, &s, &yv, sy);
        }
        c = next;
        f = fnext;
        g = gnext;
    }
    c
}

fn identity(p: usize) -> Vec<Vec<f64>> {
    (0..p)
        .map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

/// `H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T`.
fn update_inverse_hessian(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let p = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..p).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..p {
        for j in 0..p {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

/// Refines the constants of `expr` against the pinball loss on `(x, y)`.
/// Returns the refined expression and its exact mean pinball loss; the
/// loss never exceeds that of the input.
pub fn optimize_constants<R: Rng + ?Sized>(
    expr: &Expr,
    x: &Matrix,
    y: &[f64],
    tau: QuantileLevel,
    options: &ConstOptOptions,
    rng: &mut R,
) -> (Expr, f64) {
    let initial = expr.constants();
    let mut obj = Objective::new(expr, x, y, tau);
    let base_loss = obj.exact(&initial);
    if initial.is_empty() || y.is_empty() {
        return (expr.clone(), base_loss);
    }
    let noise = Normal::new(0.0, options.perturbation.max(0.0)).expect("finite perturbation");
    let mut best = (initial.clone(), base_loss);
    for start in 0..=options.nrestarts {
        let point: Vec<f64> = if start == 0 {
            initial.clone()
        } else {
            initial.iter().map(|c| c * (1.0 + noise.sample(rng))).collect()
        };
        let refined = bfgs(&mut obj, &point, options.iterations, options.step);
        let loss = obj.exact(&refined);
        if loss < best.1 {
            best = (refined, loss);
        }
    }
    (expr.with_constants(&best.0), best.1)
}
