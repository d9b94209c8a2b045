//! Chain, maximize, and estimate the sandwich for one dataset.

use serde::Serialize;

use super::config::ExperimentConfig;
use crate::asymptotics::{wald_intervals, AsymptoticCovariance, BatchLayout, Interval};
use crate::error::{Error, Result};
use crate::gibbs::run_chain;
use crate::linalg::Matrix;
use crate::model::Dataset;
use crate::objective::McmlObjective;
use crate::optimizer::{maximize, Objective, OptTrace, OptimizerOptions, Termination};
use crate::oracle::ExactObjective;

/// Largest response dimension for which the report carries the exact likelihood gap.
pub const EXACT_GAP_CAP: usize = 10;

#[derive(Clone, Debug, Serialize)]
pub struct EstimateReport {
    pub param_names: Vec<String>,
    pub theta_hat: Vec<f64>,
    #[serde(rename = "V_hat")]
    pub v_hat: Option<Vec<Vec<f64>>>,
    #[serde(rename = "D_hat")]
    pub d_hat: Option<Vec<Vec<f64>>>,
    #[serde(rename = "W_hat")]
    pub w_hat: Option<Vec<Vec<f64>>>,
    pub sandwich: Option<Vec<Vec<f64>>>,
    pub standard_errors: Option<Vec<f64>>,
    pub intervals: Option<Vec<Interval<f64>>>,
    /// Diagonals of the two error sources, side by side.
    pub v_over_n_diag: Option<Vec<f64>>,
    pub w_over_m_diag: Option<Vec<f64>>,
    pub batches: Option<BatchLayout>,
    pub level: f64,
    pub ablate_w: bool,
    pub n: usize,
    pub m: usize,
    pub distinct_states: usize,
    pub seed: u64,
    pub termination: String,
    pub iterations: usize,
    /// Approximate mean log-likelihood at `theta_hat` (up to `log Z(x_ref, ψ)` in ratio mode).
    pub log_likelihood: f64,
    pub gradient_sup_norm: f64,
    /// `log_likelihood` minus the exact mean log-likelihood at `theta_hat`;
    /// present for `d ≤ EXACT_GAP_CAP` in exact `h` mode.
    pub likelihood_gap: Option<f64>,
    /// Set when inference was refused.
    pub diagnostic: Option<String>,
}

impl EstimateReport {
    pub fn is_flagged(&self) -> bool {
        self.diagnostic.is_some()
    }
}

pub struct FitOutcome {
    pub report: EstimateReport,
    pub trace: OptTrace<f64>,
    pub covariance: Option<AsymptoticCovariance<f64>>,
}

fn rows(m: &Matrix<f64>) -> Vec<Vec<f64>> {
    m.to_rows()
}

fn termination_diagnostic(t: &Termination, names: &[String]) -> Option<String> {
    match t {
        Termination::Converged => None,
        Termination::Degenerate { component } => Some(format!(
            "estimate diverges along `{}` (component {component}): the data leave this statistic unidentified",
            names[*component]
        )),
        Termination::MaxIterations => Some("optimizer hit max_iters before the gradient tolerance".into()),
        Termination::LineSearchFailure => Some("line search could not increase the objective".into()),
    }
}

/// Fits `data` with a fresh chain seeded by `chain_seed`; `seed` is recorded in the report.
pub fn fit_dataset(cfg: &ExperimentConfig, data: &Dataset<f64>, seed: u64, chain_seed: u64) -> Result<FitOutcome> {
    let model = cfg.model()?;
    let names = model.param_names();
    let spec = cfg.sampler(&data.covariates().mean(), chain_seed)?;
    let chain = run_chain(&model, &spec, cfg.m)?;
    let objective = McmlObjective::new(&model, &chain, data)?;
    let options = OptimizerOptions {
        grad_tol: cfg.grad_tol,
        max_iters: cfg.max_iters,
        ..Default::default()
    };
    let trace = maximize(&objective, &spec.reference_param, &options)?;
    let likelihood_gap = if cfg.d <= EXACT_GAP_CAP && chain.log_norm().is_some() {
        Some(trace.value - ExactObjective::new(&model, data)?.value(&trace.theta))
    } else {
        None
    };
    let mut diagnostic = termination_diagnostic(&trace.termination, &names);
    let mut covariance = None;
    if diagnostic.is_none() {
        match AsymptoticCovariance::estimate(&objective, &trace.theta) {
            Ok(c) => covariance = Some(c),
            Err(e @ Error::NotNegativeDefinite { .. }) => diagnostic = Some(format!("inference refused: {e}")),
            Err(e) => return Err(e),
        }
    }

    let mut report = EstimateReport {
        param_names: names,
        theta_hat: trace.theta.clone(),
        v_hat: None,
        d_hat: None,
        w_hat: None,
        sandwich: None,
        standard_errors: None,
        intervals: None,
        v_over_n_diag: None,
        w_over_m_diag: None,
        batches: None,
        level: cfg.level,
        ablate_w: cfg.ablate_w,
        n: data.n(),
        m: chain.m(),
        distinct_states: objective.weighted().distinct(),
        seed,
        termination: trace.termination.label().into(),
        iterations: trace.iterations,
        log_likelihood: trace.value,
        gradient_sup_norm: crate::scalar::sup_norm(&trace.gradient),
        likelihood_gap,
        diagnostic,
    };
    if let Some(c) = &covariance {
        let sandwich = if cfg.ablate_w { c.sandwich_without_w()? } else { c.sandwich.clone() };
        let n = c.n as f64;
        let m = c.m as f64;
        report.intervals = Some(wald_intervals(&trace.theta, &sandwich, cfg.level)?);
        report.standard_errors = Some(sandwich.diag().iter().map(|v| v.sqrt()).collect());
        report.v_over_n_diag = Some(c.v_hat.diag().iter().map(|v| v / n).collect());
        report.w_over_m_diag = Some(c.w_hat.diag().iter().map(|v| v / m).collect());
        report.v_hat = Some(rows(&c.v_hat));
        report.d_hat = Some(rows(&c.d_hat));
        report.w_hat = Some(rows(&c.w_hat));
        report.sandwich = Some(rows(&sandwich));
        report.batches = Some(c.batches);
    }
    Ok(FitOutcome {
        report,
        trace,
        covariance,
    })
}
