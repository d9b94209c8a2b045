//! Damped Newton ascent for concave objectives.
//!
//! Each iteration solves `(−H + λI) s = g` by Cholesky, starting from a tiny
//! ridge and inflating it until the factorization succeeds, then backtracks
//! along `s` until the Armijo condition holds.

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::{dot, sup_norm, Scalar};

/// A smooth objective to be maximized.
pub trait Objective<T: Scalar> {
    fn dim(&self) -> usize;

    fn value(&self, theta: &[T]) -> T;

    /// Value, gradient and Hessian at `theta`.
    fn value_grad_hess(&self, theta: &[T]) -> (T, Vec<T>, Matrix<T>);
}

#[derive(Clone, Debug)]
pub struct OptimizerOptions<T> {
    /// Stop once the gradient sup-norm is at most this.
    pub grad_tol: T,
    pub max_iters: usize,
    /// First ridge tried when `−H` is not numerically positive definite.
    pub ridge_floor: T,
    pub armijo: T,
    pub max_halvings: usize,
    /// Curvature along the step, relative to the largest Hessian entry seen,
    /// below which a step counts as flat.
    pub flat_curvature: T,
    /// Minimum step sup-norm for a flat step to count towards divergence.
    pub flat_step: T,
    /// Consecutive flat steps that trigger a degeneracy stop.
    pub flat_patience: usize,
}

impl<T: Scalar> Default for OptimizerOptions<T> {
    fn default() -> Self {
        Self {
            grad_tol: T::of(1e-8),
            max_iters: 200,
            ridge_floor: T::of(1e-10),
            armijo: T::of(1e-4),
            max_halvings: 60,
            flat_curvature: T::of(1e-3),
            flat_step: T::of(0.5),
            flat_patience: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailure,
    /// The iterates run off along a direction of vanishing curvature; the
    /// component with the largest step is reported.
    Degenerate { component: usize },
}

impl Termination {
    pub fn label(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIterations => "max_iterations",
            Termination::LineSearchFailure => "line_search_failure",
            Termination::Degenerate { .. } => "degenerate",
        }
    }

    pub fn is_converged(&self) -> bool {
        *self == Termination::Converged
    }
}

#[derive(Clone, Debug)]
pub struct OptStep<T> {
    pub value: T,
    pub grad_norm: T,
    pub step_norm: T,
    pub ridge: T,
    pub halvings: usize,
    /// Accepted on gradient decrease after the Armijo test failed at rounding level.
    pub noise_floor: bool,
}

#[derive(Clone, Debug)]
pub struct OptTrace<T> {
    pub theta: Vec<T>,
    pub value: T,
    pub gradient: Vec<T>,
    pub hessian: Matrix<T>,
    pub iterations: usize,
    pub termination: Termination,
    pub steps: Vec<OptStep<T>>,
}

/// Newton direction for `(−H + λI) s = g`, returning the ridge used.
fn newton_direction<T: Scalar>(h: &Matrix<T>, g: &[T], floor: T) -> (Vec<T>, T) {
    let p = g.len();
    let neg = h.scale(-T::one()).symmetrized();
    if let Some(ch) = Cholesky::new(&neg) {
        return (ch.solve(g), T::zero());
    }
    let scale = neg.max_abs().max(T::one());
    let mut lambda = floor * scale;
    for _ in 0..40 {
        let mut a = neg.clone();
        for i in 0..p {
            a[(i, i)] += lambda;
        }
        if let Some(ch) = Cholesky::new(&a) {
            return (ch.solve(g), lambda);
        }
        lambda *= T::of(10.0);
    }
    (g.to_vec(), T::infinity())
}

/// Maximizes `objective` from `start`.
pub fn maximize<T: Scalar, O: Objective<T> + ?Sized>(
    objective: &O,
    start: &[T],
    options: &OptimizerOptions<T>,
) -> Result<OptTrace<T>> {
    let p = objective.dim();
    if start.len() != p {
        return Err(Error::Dimension {
            arg: "start",
            expected: p,
            found: start.len(),
        });
    }
    let mut theta = start.to_vec();
    let (mut value, mut grad, mut hess) = objective.value_grad_hess(&theta);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteStart);
    }
    let mut steps = Vec::new();
    let mut h_scale = hess.max_abs();
    let mut flat_run = 0usize;
    let mut iterations = 0usize;
    let termination = loop {
        if sup_norm(&grad) <= options.grad_tol {
            break Termination::Converged;
        }
        if iterations >= options.max_iters {
            break Termination::MaxIterations;
        }
        let (dir, ridge) = newton_direction(&hess, &grad, options.ridge_floor);
        let slope = dot(&grad, &dir);
        if !(slope > T::zero()) {
            break Termination::LineSearchFailure;
        }

        let mut t = T::one();
        let mut accepted = None;
        for halving in 0..=options.max_halvings {
            let trial: Vec<T> = theta.iter().zip(&dir).map(|(&a, &s)| a + t * s).collect();
            let v = objective.value(&trial);
            if v.is_finite() && v >= value + options.armijo * t * slope {
                accepted = Some((trial, halving, false));
                break;
            }
            t *= T::of(0.5);
        }
        if accepted.is_none() {
            // Near the optimum the predicted increase can fall below the
            // rounding error of the objective; take the full step if it
            // still shrinks the gradient.
            let trial: Vec<T> = theta.iter().zip(&dir).map(|(&a, &s)| a + s).collect();
            let (v, g, _) = objective.value_grad_hess(&trial);
            let tol = T::of(64.0) * T::epsilon() * value.abs().max(T::one());
            if v.is_finite() && v >= value - tol && sup_norm(&g) < sup_norm(&grad) {
                t = T::one();
                accepted = Some((trial, options.max_halvings, true));
            }
        }
        let Some((next, halvings, noise_floor)) = accepted else {
            break Termination::LineSearchFailure;
        };

        let step: Vec<T> = dir.iter().map(|&s| t * s).collect();
        let curvature = dot(&step, &hess.matvec(&step)).abs();
        let step_sq = dot(&step, &step);
        let step_norm = sup_norm(&step);
        let flat = h_scale <= T::zero() || curvature <= options.flat_curvature * step_sq * h_scale;
        if flat && step_norm >= options.flat_step {
            flat_run += 1;
        } else {
            flat_run = 0;
        }

        theta = next;
        let (v, g, h) = objective.value_grad_hess(&theta);
        value = v;
        grad = g;
        hess = h;
        h_scale = h_scale.max(hess.max_abs());
        iterations += 1;
        steps.push(OptStep {
            value,
            grad_norm: sup_norm(&grad),
            step_norm,
            ridge,
            halvings,
            noise_floor,
        });
        if flat_run >= options.flat_patience {
            let component = step
                .iter()
                .enumerate()
                .fold((0, T::zero()), |best, (j, &s)| if s.abs() > best.1 { (j, s.abs()) } else { best })
                .0;
            break Termination::Degenerate { component };
        }
    };
    Ok(OptTrace {
        theta,
        value,
        gradient: grad,
        hessian: hess,
        iterations,
        termination,
        steps,
    })
}
