//! Replication study: fresh data and a fresh chain per replication, with
//! Wald coverage and an empirical check of the reported covariance.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use super::fit::fit_dataset;
use super::simulate::simulate_dataset;
use crate::error::{Error, Result};
use crate::linalg::{relative_frobenius, sample_covariance, Matrix};
use crate::seeds::derive_seed;
use crate::stats::{ks_normal, normal_quantile};

/// Levels at which coverage is always summarized, besides the configured one.
pub const SUMMARY_LEVELS: [f64; 3] = [0.8, 0.95, 0.99];

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationRow {
    pub rep: usize,
    pub seed: u64,
    /// `ok`, or the reason the replication produced no interval.
    pub status: String,
    pub iterations: usize,
    pub theta_hat: Vec<f64>,
    pub se: Vec<f64>,
    pub se_without_w: Vec<f64>,
    pub standardized: Vec<f64>,
    pub sandwich: Option<Matrix<f64>>,
}

impl ReplicationRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KsSummary {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CoverageSummary {
    pub param_names: Vec<String>,
    pub theta0: Vec<f64>,
    pub replications: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub level: f64,
    /// Per-component coverage of the full sandwich intervals at `level`.
    pub coverage: Vec<f64>,
    /// Same with `W/m` dropped from the sandwich.
    pub coverage_without_w: Vec<f64>,
    pub coverage_by_level: BTreeMap<String, Vec<f64>>,
    pub coverage_without_w_by_level: BTreeMap<String, Vec<f64>>,
    pub empirical_cov: Option<Vec<Vec<f64>>>,
    pub mean_sandwich: Option<Vec<Vec<f64>>>,
    /// `‖empirical − mean sandwich‖_F / ‖mean sandwich‖_F`.
    pub relative_frobenius: Option<f64>,
    /// Mean over replications of `‖θ̂ − θ₀‖_∞`.
    pub mean_sup_error: Option<f64>,
    /// Mean reported standard error per component.
    pub mean_se: Vec<f64>,
    /// KS test of each standardized component against `N(0, 1)`.
    pub ks: Vec<Option<KsSummary>>,
}

pub struct CoverageOutcome {
    pub rows: Vec<ReplicationRow>,
    pub summary: CoverageSummary,
}

fn failed_row(rep: usize, seed: u64, p: usize, status: String, iterations: usize, theta: Vec<f64>) -> ReplicationRow {
    ReplicationRow {
        rep,
        seed,
        status,
        iterations,
        theta_hat: if theta.is_empty() { vec![f64::NAN; p] } else { theta },
        se: vec![f64::NAN; p],
        se_without_w: vec![f64::NAN; p],
        standardized: vec![f64::NAN; p],
        sandwich: None,
    }
}

fn replicate(cfg: &ExperimentConfig, theta0: &[f64], p: usize, rep: usize, master: u64) -> ReplicationRow {
    let seed = derive_seed(master, rep as u64);
    let run = || -> Result<ReplicationRow> {
        let data = simulate_dataset(cfg, cfg.n, derive_seed(seed, 0))?;
        let out = fit_dataset(cfg, &data, seed, derive_seed(seed, 1))?;
        let Some(cov) = out.covariance else {
            let reason = out.report.diagnostic.unwrap_or_else(|| "no covariance".into());
            return Ok(failed_row(rep, seed, p, reason, out.trace.iterations, out.trace.theta));
        };
        let se = |m: &Matrix<f64>| m.diag().iter().map(|v| v.sqrt()).collect::<Vec<_>>();
        let without = cov.sandwich_without_w()?;
        Ok(ReplicationRow {
            rep,
            seed,
            status: "ok".into(),
            iterations: out.trace.iterations,
            se: se(&cov.sandwich),
            se_without_w: se(&without),
            standardized: cov.standardize(&out.trace.theta, theta0)?,
            theta_hat: out.trace.theta,
            sandwich: Some(cov.sandwich),
        })
    };
    run().unwrap_or_else(|e| failed_row(rep, seed, p, format!("error: {e}"), 0, Vec::new()))
}

fn coverage_at(rows: &[&ReplicationRow], theta0: &[f64], level: f64, without_w: bool) -> Vec<f64> {
    let z = normal_quantile(0.5 * (1.0 + level));
    (0..theta0.len())
        .map(|j| {
            if rows.is_empty() {
                return f64::NAN;
            }
            let hits = rows
                .iter()
                .filter(|r| {
                    let se = if without_w { r.se_without_w[j] } else { r.se[j] };
                    (r.theta_hat[j] - theta0[j]).abs() <= z * se
                })
                .count();
            hits as f64 / rows.len() as f64
        })
        .collect()
}

fn level_key(level: f64) -> String {
    format!("{level}")
}

/// Runs `cfg.replications` replications on a pool of `workers` threads.
///
/// Rows come back in replication order and every reduction is order-fixed, so
/// the outcome does not depend on `workers`.
pub fn run_coverage(cfg: &ExperimentConfig, seed: u64, workers: usize) -> Result<CoverageOutcome> {
    let model = cfg.model()?;
    let names = model.param_names();
    let p = names.len();
    let theta0 = cfg.theta0()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let rows: Vec<ReplicationRow> = pool.install(|| {
        (0..cfg.replications)
            .into_par_iter()
            .map(|rep| replicate(cfg, &theta0, p, rep, seed))
            .collect()
    });

    let ok: Vec<&ReplicationRow> = rows.iter().filter(|r| r.is_ok()).collect();
    let mut by_level = BTreeMap::new();
    let mut without_by_level = BTreeMap::new();
    for level in SUMMARY_LEVELS.iter().copied().chain([cfg.level]) {
        by_level.insert(level_key(level), coverage_at(&ok, &theta0, level, false));
        without_by_level.insert(level_key(level), coverage_at(&ok, &theta0, level, true));
    }
    let (empirical_cov, mean_sandwich, rel) = if ok.len() >= 2 {
        let estimates: Vec<Vec<f64>> = ok.iter().map(|r| r.theta_hat.clone()).collect();
        let emp = sample_covariance(&estimates);
        let mut mean = Matrix::zeros(p, p);
        for r in &ok {
            mean.add_assign_scaled(r.sandwich.as_ref().expect("ok rows carry a sandwich"), 1.0 / ok.len() as f64);
        }
        let rel = relative_frobenius(&emp, &mean);
        (Some(emp.to_rows()), Some(mean.to_rows()), Some(rel))
    } else {
        (None, None, None)
    };
    let mean_sup_error = (!ok.is_empty()).then(|| {
        ok.iter()
            .map(|r| {
                r.theta_hat
                    .iter()
                    .zip(&theta0)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .sum::<f64>()
            / ok.len() as f64
    });
    let mean_se = (0..p)
        .map(|j| ok.iter().map(|r| r.se[j]).sum::<f64>() / ok.len() as f64)
        .collect();
    let ks = (0..p)
        .map(|j| {
            let z: Vec<f64> = ok.iter().map(|r| r.standardized[j]).collect();
            ks_normal(&z).map(|t| KsSummary {
                statistic: t.statistic,
                p_value: t.p_value,
            })
        })
        .collect();

    let summary = CoverageSummary {
        param_names: names,
        theta0: theta0.clone(),
        replications: rows.len(),
        succeeded: ok.len(),
        failed: rows.len() - ok.len(),
        n: cfg.n,
        m: cfg.m,
        seed,
        level: cfg.level,
        coverage: by_level[&level_key(cfg.level)].clone(),
        coverage_without_w: without_by_level[&level_key(cfg.level)].clone(),
        coverage_by_level: by_level,
        coverage_without_w_by_level: without_by_level,
        empirical_cov,
        mean_sandwich,
        relative_frobenius: rel,
        mean_sup_error,
        mean_se,
        ks,
    };
    Ok(CoverageOutcome { rows, summary })
}

/// Writes `coverage.csv`, `standardized.csv` and `coverage_summary.json` into `dir`.
pub fn write_coverage(outcome: &CoverageOutcome, theta0: &[f64], level: f64, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let names = &outcome.summary.param_names;
    let z = normal_quantile(0.5 * (1.0 + level));

    let mut w = csv::Writer::from_path(dir.join("coverage.csv"))?;
    let mut header: Vec<String> = ["rep", "seed", "status", "iterations"].map(String::from).to_vec();
    for prefix in ["theta_hat", "se", "se_without_w", "hit", "hit_without_w"] {
        header.extend(names.iter().map(|n| format!("{prefix}_{n}")));
    }
    w.write_record(&header)?;
    for r in &outcome.rows {
        let mut rec = vec![r.rep.to_string(), r.seed.to_string(), r.status.clone(), r.iterations.to_string()];
        rec.extend(r.theta_hat.iter().map(f64::to_string));
        rec.extend(r.se.iter().map(f64::to_string));
        rec.extend(r.se_without_w.iter().map(f64::to_string));
        for se in [&r.se, &r.se_without_w] {
            rec.extend((0..names.len()).map(|j| {
                if !r.is_ok() {
                    String::new()
                } else {
                    u8::from((r.theta_hat[j] - theta0[j]).abs() <= z * se[j]).to_string()
                }
            }));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("standardized.csv"))?;
    let mut header = vec!["rep".to_string()];
    header.extend(names.iter().map(|n| format!("z_{n}")));
    w.write_record(&header)?;
    for r in outcome.rows.iter().filter(|r| r.is_ok()) {
        let mut rec = vec![r.rep.to_string()];
        rec.extend(r.standardized.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;

    write_json(&dir.join("coverage_summary.json"), &outcome.summary)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: &str = "d = 2\nl = 1\ntheta0 = [-0.4, 0.3, 0.2, 0.7, -0.5]\nn = 300\nm = 1000\nreplications = 6\n";

    #[test]
    fn single_replication() {
        let cfg = ExperimentConfig::parse("d = 2\nl = 1\nn = 200\nm = 500\n").unwrap();
        let out = run_coverage(&cfg, 3, 1).unwrap();
        assert_eq!(out.rows.len(), 1);
        for c in &out.summary.coverage {
            assert!(*c == 0.0 || *c == 1.0);
        }
        assert!(out.summary.empirical_cov.is_none());
    }

    #[test]
    fn workers_do_not_change_results() {
        let cfg = ExperimentConfig::parse(CFG).unwrap();
        let a = run_coverage(&cfg, 11, 1).unwrap();
        let b = run_coverage(&cfg, 11, 3).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(
            serde_json::to_string(&a.summary).unwrap(),
            serde_json::to_string(&b.summary).unwrap()
        );
        let seeds: std::collections::HashSet<u64> = a.rows.iter().map(|r| r.seed).collect();
        assert_eq!(seeds.len(), a.rows.len());
    }

    #[test]
    fn coverage_increases_with_level() {
        let cfg = ExperimentConfig::parse(CFG).unwrap();
        let out = run_coverage(&cfg, 12, 2).unwrap();
        let lv = &out.summary.coverage_by_level;
        for j in 0..5 {
            assert!(lv["0.8"][j] <= lv["0.95"][j] && lv["0.95"][j] <= lv["0.99"][j]);
            assert!(out.summary.coverage_without_w[j] <= out.summary.coverage[j]);
        }
    }

    #[test]
    fn outputs_written() {
        let cfg = ExperimentConfig::parse(CFG).unwrap();
        let out = run_coverage(&cfg, 1, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_coverage(&out, &cfg.theta0().unwrap(), cfg.level, dir.path()).unwrap();
        let csv = std::fs::read_to_string(dir.path().join("coverage.csv")).unwrap();
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.starts_with("rep,seed,status,iterations,theta_hat_beta_1_1"));
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("coverage_summary.json")).unwrap()).unwrap();
        assert_eq!(summary["replications"], 6);
        assert!(dir.path().join("standardized.csv").exists());
    }
}
