//! The Monte Carlo approximation of the normalizing constant and the
//! resulting approximate mean log-likelihood with its derivatives.
//!
//! For a chain `Y¹..Y^m` with stationary density `h`,
//!
//! ```text
//! C_m(x, θ) = (1/m) Σ_k exp(θ′T(x, Y^k)) / h(Y^k)
//! ℓ(θ)      = (1/n) Σ_i [θ′T(X_i, Y_i) − log C_m(X_i, θ)]
//! ```
//!
//! The gradient is the mean of `T(X_i, Y_i)` minus self-normalized importance
//! weighted means of `T(X_i, ·)` over the chain, and the Hessian is minus the
//! average weighted covariance, hence `ℓ` is concave. Everything is evaluated
//! in the log domain with a max shift.
//!
//! One chain is shared by all observations. Because `log h` depends only on
//! the state, repeated states are folded into multiplicities before the
//! observation loop; this is an exact regrouping of the same sum.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gibbs::{DensityMode, MonteCarloChain};
use crate::linalg::Matrix;
use crate::model::{check_theta, check_x, Covariates, Dataset, ModelFamily, Response};
use crate::optimizer::Objective;
use crate::scalar::Scalar;

/// Observations per parallel work unit. Partial sums are combined in chunk
/// order, so results do not depend on the number of worker threads.
const CHUNK: usize = 64;

/// Single-pass log-sum-exp accumulator with a running maximum.
#[derive(Clone, Copy, Debug)]
pub struct LogSumExp<T> {
    max: T,
    sum: T,
}

impl<T: Scalar> Default for LogSumExp<T> {
    fn default() -> Self {
        Self {
            max: T::neg_infinity(),
            sum: T::zero(),
        }
    }
}

impl<T: Scalar> LogSumExp<T> {
    pub fn push(&mut self, v: T) {
        if v == T::neg_infinity() {
            return;
        }
        if v > self.max {
            self.sum = self.sum * (self.max - v).exp() + T::one();
            self.max = v;
        } else {
            self.sum += (v - self.max).exp();
        }
    }

    pub fn value(&self) -> T {
        if self.sum == T::zero() {
            T::neg_infinity()
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// Two-pass `log Σ exp(v)`.
pub fn log_sum_exp<T: Scalar>(values: &[T]) -> T {
    let max = values.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    let s: T = values.iter().map(|&v| (v - max).exp()).sum();
    max + s.ln()
}

/// Distinct chain states with their multiplicities and `log h`.
#[derive(Clone, Debug)]
pub struct WeightedStates<T> {
    states: Vec<Response>,
    log_h: Vec<T>,
    log_mult: Vec<T>,
    /// Position of each chain step in `states`.
    step_index: Vec<u32>,
    m: usize,
    mode: DensityMode,
}

impl<T: Scalar> WeightedStates<T> {
    pub fn from_chain(chain: &MonteCarloChain<T>) -> Self {
        let mut lookup: HashMap<Response, u32> = HashMap::new();
        let mut states = Vec::new();
        let mut log_h = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        let mut step_index = Vec::with_capacity(chain.m());
        for (&y, &lh) in chain.states().iter().zip(chain.log_h()) {
            let idx = *lookup.entry(y).or_insert_with(|| {
                states.push(y);
                log_h.push(lh);
                counts.push(0);
                (states.len() - 1) as u32
            });
            counts[idx as usize] += 1;
            step_index.push(idx);
        }
        Self {
            states,
            log_h,
            log_mult: counts.iter().map(|&c| T::of_usize(c).ln()).collect(),
            step_index,
            m: chain.m(),
            mode: chain.mode(),
        }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn distinct(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[Response] {
        &self.states
    }

    pub fn log_h(&self) -> &[T] {
        &self.log_h
    }

    /// Index into [`WeightedStates::states`] of every chain step, in chain order.
    pub fn step_index(&self) -> &[u32] {
        &self.step_index
    }

    pub fn mode(&self) -> DensityMode {
        self.mode
    }
}

/// Importance-weighted summaries of `T(x, ·)` over the chain for one covariate value.
#[derive(Clone, Debug)]
pub struct ObservationMoments<T> {
    pub log_cm: T,
    /// Self-normalized weighted mean of `T(x, Y^k)`; empty if not requested.
    pub mean: Vec<T>,
    /// Weighted covariance; `None` if not requested.
    pub cov: Option<Matrix<T>>,
}

/// How much of the derivative information to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value,
    Gradient,
    Hessian,
}

/// Log-domain weights `θ′T(x, s_j) − log h_j + log mult_j` and their log-sum-exp.
fn log_weights<T: Scalar, M: ModelFamily<T> + ?Sized>(
    model: &M,
    ws: &WeightedStates<T>,
    x: &[T],
    theta: &[T],
    out: &mut Vec<T>,
) -> T {
    out.clear();
    let mut max = T::neg_infinity();
    for ((&y, &lh), &lm) in ws.states.iter().zip(&ws.log_h).zip(&ws.log_mult) {
        let a = model.log_f(x, y, theta) - lh + lm;
        max = max.max(a);
        out.push(a);
    }
    let s: T = out.iter().map(|&a| (a - max).exp()).sum();
    max + s.ln()
}

/// Weighted moments of `T(x, ·)` for one covariate vector. `scratch` buffers are reused.
pub fn observation_moments<T: Scalar, M: ModelFamily<T> + ?Sized>(
    model: &M,
    ws: &WeightedStates<T>,
    x: &[T],
    theta: &[T],
    order: Order,
) -> ObservationMoments<T> {
    let mut buf = Scratch::new(model.param_dim());
    moments_with(model, ws, x, theta, order, &mut buf)
}

struct Scratch<T> {
    logw: Vec<T>,
    t: Vec<T>,
    c: Vec<T>,
}

impl<T: Scalar> Scratch<T> {
    fn new(p: usize) -> Self {
        Self {
            logw: Vec::new(),
            t: vec![T::zero(); p],
            c: vec![T::zero(); p],
        }
    }
}

fn moments_with<T: Scalar, M: ModelFamily<T> + ?Sized>(
    model: &M,
    ws: &WeightedStates<T>,
    x: &[T],
    theta: &[T],
    order: Order,
    buf: &mut Scratch<T>,
) -> ObservationMoments<T> {
    let p = model.param_dim();
    let lse = log_weights(model, ws, x, theta, &mut buf.logw);
    let log_cm = lse - T::of_usize(ws.m).ln();
    if order == Order::Value {
        return ObservationMoments {
            log_cm,
            mean: Vec::new(),
            cov: None,
        };
    }
    let mut mean = vec![T::zero(); p];
    for (j, &y) in ws.states.iter().enumerate() {
        let w = (buf.logw[j] - lse).exp();
        model.suff_stat_into(x, y, &mut buf.t);
        for (m, &t) in mean.iter_mut().zip(&buf.t) {
            *m += w * t;
        }
    }
    let cov = (order == Order::Hessian).then(|| {
        let mut cov = Matrix::zeros(p, p);
        for (j, &y) in ws.states.iter().enumerate() {
            let w = (buf.logw[j] - lse).exp();
            model.suff_stat_into(x, y, &mut buf.t);
            for ((c, &t), &m) in buf.c.iter_mut().zip(&buf.t).zip(&mean) {
                *c = t - m;
            }
            cov.add_outer(&buf.c, &buf.c, w);
        }
        cov.symmetrized()
    });
    ObservationMoments { log_cm, mean, cov }
}

/// Value and derivatives of the approximate mean log-likelihood.
#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    pub value: T,
    pub gradient: Vec<T>,
    pub hessian: Option<Matrix<T>>,
}

/// The approximate mean log-likelihood for a fixed chain and dataset.
pub struct McmlObjective<'a, T, M: ?Sized> {
    model: &'a M,
    data: &'a Dataset<T>,
    weighted: WeightedStates<T>,
}

impl<'a, T: Scalar, M: ModelFamily<T> + ?Sized> McmlObjective<'a, T, M> {
    pub fn new(model: &'a M, chain: &MonteCarloChain<T>, data: &'a Dataset<T>) -> Result<Self> {
        data.check_model(model)?;
        if chain.response_dim() != model.response_dim() {
            return Err(Error::Dimension {
                arg: "chain",
                expected: model.response_dim(),
                found: chain.response_dim(),
            });
        }
        Ok(Self {
            model,
            data,
            weighted: WeightedStates::from_chain(chain),
        })
    }

    pub fn model(&self) -> &M {
        self.model
    }

    pub fn data(&self) -> &Dataset<T> {
        self.data
    }

    pub fn weighted(&self) -> &WeightedStates<T> {
        &self.weighted
    }

    pub fn evaluate(&self, theta: &[T], order: Order) -> Evaluation<T> {
        let p = self.model.param_dim();
        let n = self.data.n();
        let partials: Vec<(T, Vec<T>, Option<Matrix<T>>)> = (0..n)
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut buf = Scratch::new(p);
                let mut value = T::zero();
                let mut grad = vec![T::zero(); if order >= Order::Gradient { p } else { 0 }];
                let mut hess = (order == Order::Hessian).then(|| Matrix::zeros(p, p));
                for &i in chunk {
                    let x = self.data.covariate(i);
                    let y = self.data.response(i);
                    let om = moments_with(self.model, &self.weighted, x, theta, order, &mut buf);
                    value += self.model.log_f(x, y, theta) - om.log_cm;
                    if order >= Order::Gradient {
                        self.model.suff_stat_into(x, y, &mut buf.t);
                        for ((g, &t), &mu) in grad.iter_mut().zip(&buf.t).zip(&om.mean) {
                            *g += t - mu;
                        }
                    }
                    if let (Some(h), Some(c)) = (hess.as_mut(), om.cov.as_ref()) {
                        h.add_assign_scaled(c, T::one());
                    }
                }
                (value, grad, hess)
            })
            .collect();

        let inv_n = T::one() / T::of_usize(n);
        let mut value = T::zero();
        let mut gradient = vec![T::zero(); if order >= Order::Gradient { p } else { 0 }];
        let mut hessian = (order == Order::Hessian).then(|| Matrix::zeros(p, p));
        for (v, g, h) in partials {
            value += v;
            for (a, b) in gradient.iter_mut().zip(g) {
                *a += b;
            }
            if let (Some(acc), Some(h)) = (hessian.as_mut(), h) {
                acc.add_assign_scaled(&h, T::one());
            }
        }
        Evaluation {
            value: value * inv_n,
            gradient: gradient.into_iter().map(|g| g * inv_n).collect(),
            hessian: hessian.map(|h| h.scale(-inv_n)),
        }
    }

    pub fn value(&self, theta: &[T]) -> T {
        self.evaluate(theta, Order::Value).value
    }

    pub fn gradient(&self, theta: &[T]) -> Vec<T> {
        self.evaluate(theta, Order::Gradient).gradient
    }

    pub fn hessian(&self, theta: &[T]) -> Matrix<T> {
        self.evaluate(theta, Order::Hessian).hessian.expect("hessian requested")
    }

    /// Per-observation moments at `theta`, in observation order.
    pub fn observation_states(&self, theta: &[T], order: Order) -> Vec<ObservationMoments<T>> {
        let p = self.model.param_dim();
        (0..self.data.n())
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .flat_map_iter(|chunk| {
                let mut buf = Scratch::new(p);
                chunk
                    .iter()
                    .map(|&i| moments_with(self.model, &self.weighted, self.data.covariate(i), theta, order, &mut buf))
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    /// Plug-in scores `T(X_i, Y_i) − Σ_k w_ik T(X_i, Y^k)`.
    pub fn scores(&self, theta: &[T]) -> Vec<Vec<T>> {
        let states = self.observation_states(theta, Order::Gradient);
        states
            .into_iter()
            .enumerate()
            .map(|(i, om)| {
                let mut s = self
                    .model
                    .suff_stat(self.data.covariate(i), self.data.response(i))
                    .expect("dataset checked against model");
                for (a, b) in s.iter_mut().zip(&om.mean) {
                    *a -= *b;
                }
                s
            })
            .collect()
    }
}

impl<T: Scalar, M: ModelFamily<T> + ?Sized> Objective<T> for McmlObjective<'_, T, M> {
    fn dim(&self) -> usize {
        self.model.param_dim()
    }

    fn value(&self, theta: &[T]) -> T {
        McmlObjective::value(self, theta)
    }

    fn value_grad_hess(&self, theta: &[T]) -> (T, Vec<T>, Matrix<T>) {
        let e = self.evaluate(theta, Order::Hessian);
        (e.value, e.gradient, e.hessian.expect("hessian requested"))
    }
}

fn check_chain<T: Scalar, M: ModelFamily<T> + ?Sized>(model: &M, chain: &MonteCarloChain<T>) -> Result<()> {
    if chain.response_dim() != model.response_dim() {
        return Err(Error::Dimension {
            arg: "chain",
            expected: model.response_dim(),
            found: chain.response_dim(),
        });
    }
    Ok(())
}

/// `log C_m(x, θ)`, streamed over the raw chain in a single pass.
pub fn log_cm<T: Scalar, M: ModelFamily<T> + ?Sized>(
    model: &M,
    chain: &MonteCarloChain<T>,
    x: &[T],
    theta: &[T],
) -> Result<T> {
    check_chain(model, chain)?;
    check_x(model, x)?;
    check_theta(model, theta)?;
    let mut acc = LogSumExp::default();
    for (&y, &lh) in chain.states().iter().zip(chain.log_h()) {
        acc.push(model.log_f(x, y, theta) - lh);
    }
    Ok(acc.value() - T::of_usize(chain.m()).ln())
}

/// `(1/n) Σ_i [θ′T(X_i, Y_i) − log C_m(X_i, θ)]`.
pub fn mcml_value<T: Scalar, M: ModelFamily<T> + ?Sized>(
    model: &M,
    chain: &MonteCarloChain<T>,
    data: &Dataset<T>,
    theta: &[T],
) -> Result<T> {
    check_theta(model, theta)?;
    Ok(McmlObjective::new(model, chain, data)?.value(theta))
}

pub fn mcml_grad<T: Scalar, M: ModelFamily<T> + ?Sized>(
    model: &M,
    chain: &MonteCarloChain<T>,
    data: &Dataset<T>,
    theta: &[T],
) -> Result<Vec<T>> {
    check_theta(model, theta)?;
    Ok(McmlObjective::new(model, chain, data)?.gradient(theta))
}

pub fn mcml_hess<T: Scalar, M: ModelFamily<T> + ?Sized>(
    model: &M,
    chain: &MonteCarloChain<T>,
    data: &Dataset<T>,
    theta: &[T],
) -> Result<Matrix<T>> {
    check_theta(model, theta)?;
    Ok(McmlObjective::new(model, chain, data)?.hessian(theta))
}

/// `Ž_m(x, θ) = C_m(x, θ) / Z(x, θ)` given the exact `log Z(x, θ)`.
pub fn zhat<T: Scalar, M: ModelFamily<T> + ?Sized>(
    model: &M,
    chain: &MonteCarloChain<T>,
    x: &[T],
    theta: &[T],
    exact_log_z: T,
) -> Result<T> {
    if chain.mode() == DensityMode::Ratio {
        return Err(Error::RatioMode("zhat"));
    }
    Ok((log_cm(model, chain, x, theta)? - exact_log_z).exp())
}

/// Missing-data maximand `Σ_i log[(1/m) Σ_k f(X_i, Y^k | θ) / h(Y^k)]` with `Y` latent.
pub fn missing_data_value<T: Scalar, M: ModelFamily<T> + ?Sized>(
    model: &M,
    chain: &MonteCarloChain<T>,
    observed: &Covariates<T>,
    theta: &[T],
) -> Result<T> {
    if observed.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_chain(model, chain)?;
    check_theta(model, theta)?;
    if observed.dim() != model.covariate_dim() {
        return Err(Error::Dimension {
            arg: "observed",
            expected: model.covariate_dim(),
            found: observed.dim(),
        });
    }
    let ws = WeightedStates::from_chain(chain);
    let mut buf = Vec::new();
    let ln_m = T::of_usize(ws.m).ln();
    Ok(observed
        .iter()
        .map(|x| log_weights(model, &ws, x, theta, &mut buf) - ln_m)
        .sum())
}

/// `(1/n) Σ_i θ′T(X_i, Y_i)`, the data term shared by every likelihood variant.
pub fn mean_data_term<T: Scalar, M: ModelFamily<T> + ?Sized>(model: &M, data: &Dataset<T>, theta: &[T]) -> T {
    let s: T = (0..data.n())
        .map(|i| model.log_f(data.covariate(i), data.response(i), theta))
        .sum();
    s / T::of_usize(data.n())
}
