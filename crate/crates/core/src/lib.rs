//! Markov chain Monte Carlo maximum likelihood for exponential families whose
//! normalizing constant is intractable, with the autologistic model as the
//! worked family.
//!
//! A single Gibbs chain targeting an instrumental density `h` supplies an
//! importance-sampling estimate of every normalizer `Z(x, θ)`. Maximizing the
//! resulting approximate likelihood gives `θ̂`, whose covariance is estimated
//! by the sandwich `D⁻¹(V/n + W/m)D⁻¹`: `V/n` is sampling error of the data and
//! `W/m` Monte Carlo error of the chain. Small models can be checked exactly
//! against the [`oracle`] module.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! at the crate root fix it to `f64`.

// `!(a > b)` is used on purpose so that NaN lands on the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod autologistic;
pub mod error;
pub mod experiments;
pub mod gibbs;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod optimizer;
pub mod oracle;
pub mod scalar;
pub mod seeds;
pub mod stats;

pub use autologistic::{build_autologistic, Autologistic, AutologisticSpec, Mask};
pub use error::{Error, Result};
pub use gibbs::{run_chain, DensityMode, Scan};
pub use model::{ModelFamily, Response};
pub use optimizer::{maximize, OptimizerOptions, Termination};
pub use scalar::Scalar;

pub type Matrix = linalg::Matrix<f64>;
pub type Dataset = model::Dataset<f64>;
pub type Covariates = model::Covariates<f64>;
pub type SamplerSpec = gibbs::SamplerSpec<f64>;
pub type MonteCarloChain = gibbs::MonteCarloChain<f64>;
pub type AsymptoticCovariance = asymptotics::AsymptoticCovariance<f64>;
pub type KernelAnalysis = oracle::KernelAnalysis<f64>;

/// Single-precision counterparts.
pub mod f32 {
    pub type Matrix = crate::linalg::Matrix<f32>;
    pub type Dataset = crate::model::Dataset<f32>;
    pub type Covariates = crate::model::Covariates<f32>;
    pub type SamplerSpec = crate::gibbs::SamplerSpec<f32>;
    pub type MonteCarloChain = crate::gibbs::MonteCarloChain<f32>;
    pub type AsymptoticCovariance = crate::asymptotics::AsymptoticCovariance<f32>;
    pub type KernelAnalysis = crate::oracle::KernelAnalysis<f32>;
}
