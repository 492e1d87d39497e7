//! Gradient descent with Armijo backtracking.
//!
//! Shared by latent projection, logistic regression and mapper training.
//! Every accepted step satisfies the sufficient-decrease condition, so the
//! recorded objective trace is nonincreasing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A differentiable objective over a flat parameter vector.
pub trait Objective {
    /// Returns the objective value and its gradient at `x`.
    fn value_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Value only; override when it is cheaper than the full gradient.
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.value_and_grad(x).map(|(v, _)| v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentConfig {
    /// Initial trial step; later iterations start from twice the last accepted step.
    pub step_size: f64,
    pub max_iters: usize,
    /// Stop once the gradient's Euclidean norm falls to this value.
    pub grad_tolerance: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Upper bound on the trial step.
    pub max_step: f64,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self { step_size: 1.0, max_iters: 1000, grad_tolerance: 1e-8, armijo: 1e-4, max_step: 1e6 }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidConfig("step_size must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.grad_tolerance >= 0.0) {
            return Err(Error::InvalidConfig("grad_tolerance must be nonnegative".into()));
        }
        if !(self.armijo > 0.0 && self.armijo < 1.0) {
            return Err(Error::InvalidConfig("armijo must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DescentOutcome {
    pub x: Vec<f64>,
    /// Objective value before the first step and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

impl DescentOutcome {
    pub fn final_value(&self) -> f64 {
        *self.trace.last().expect("trace is never empty")
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteObjective)
    }
}

/// Minimizes `objective` from `init`.
///
/// Terminates after `max_iters` accepted steps, when the gradient norm drops
/// to `grad_tolerance`, or when no step size down to machine precision yields
/// a decrease (the point is then stationary to working precision).
pub fn minimize<O: Objective + ?Sized>(objective: &O, init: Vec<f64>, cfg: &DescentConfig) -> Result<DescentOutcome> {
    cfg.validate()?;
    let mut x = init;
    let (mut fx, mut grad) = objective.value_and_grad(&x)?;
    check(fx)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteObjective);
    }
    let mut trace = vec![fx];
    let mut step = cfg.step_size;
    let mut iterations = 0;
    let mut gnorm = norm(&grad);
    let mut converged = gnorm <= cfg.grad_tolerance;
    let mut trial = vec![0.0; x.len()];

    while !converged && iterations < cfg.max_iters {
        let g2 = gnorm * gnorm;
        let mut accepted = false;
        let mut t = step;
        loop {
            for ((xt, xi), gi) in trial.iter_mut().zip(&x).zip(&grad) {
                *xt = xi - t * gi;
            }
            let ft = objective.value(&trial)?;
            // The strict test matters once the Armijo term drops below the
            // resolution of fx: equal values would otherwise be accepted forever.
            if ft.is_finite() && ft < fx && ft <= fx - cfg.armijo * t * g2 {
                accepted = true;
                break;
            }
            t *= 0.5;
            if t * gnorm <= f64::EPSILON * (1.0 + norm(&x)) * 1e-3 || t == 0.0 {
                break;
            }
        }
        if !accepted {
            // No representable step decreases the objective.
            converged = true;
            break;
        }
        std::mem::swap(&mut x, &mut trial);
        let (f_new, g_new) = objective.value_and_grad(&x)?;
        fx = check(f_new)?;
        grad = g_new;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteObjective);
        }
        trace.push(fx);
        iterations += 1;
        gnorm = norm(&grad);
        converged = gnorm <= cfg.grad_tolerance;
        step = (2.0 * t).min(cfg.max_step);
    }

    Ok(DescentOutcome { x, trace, iterations, grad_norm: gnorm, converged })
}
