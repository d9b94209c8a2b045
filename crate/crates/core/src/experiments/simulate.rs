//! Exact simulation of `(Y_i, X_i)` pairs from the model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{CovariateKind, ExperimentConfig};
use crate::error::{Error, Result};
use crate::model::{Covariates, Dataset, Response};
use crate::oracle::state_probabilities;

/// Bound applied to normal covariate draws.
pub const NORMAL_CLIP: f64 = 3.0;

fn read_covariate_file(cfg: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    let path = cfg.resolve(cfg.covariate_file.as_deref().expect("checked by validate"));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&path)?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(i as u64 + 2, |p| p.line());
        if record.len() != cfg.l {
            return Err(Error::Parse {
                line,
                column: record.len().min(cfg.l) + 1,
                message: format!("expected {} covariate columns, found {}", cfg.l, record.len()),
            });
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field.parse::<f64>().map_err(|e| Error::Parse {
                    line,
                    column: j + 1,
                    message: format!("{field:?}: {e}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(rows)
}

/// `n` covariate vectors from the configured generator.
pub fn generate_covariates<R: Rng>(cfg: &ExperimentConfig, n: usize, rng: &mut R) -> Result<Covariates<f64>> {
    let l = cfg.l;
    let rows = match cfg.covariates {
        CovariateKind::Uniform => (0..n)
            .map(|_| (0..l).map(|_| rng.random_range(cfg.covariate_low..cfg.covariate_high)).collect())
            .collect(),
        CovariateKind::Normal => (0..n)
            .map(|_| {
                (0..l)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        z.clamp(-NORMAL_CLIP, NORMAL_CLIP)
                    })
                    .collect()
            })
            .collect(),
        CovariateKind::File => {
            let file = read_covariate_file(cfg)?;
            (0..n).map(|i| file[i % file.len()].clone()).collect()
        }
    };
    Covariates::new(l, rows)
}

/// Inverse-CDF draw from a probability vector over the enumerated states.
pub fn draw_state(prob: &[f64], u: f64) -> Response {
    let mut acc = 0.0;
    for (j, &p) in prob.iter().enumerate() {
        acc += p;
        if u < acc {
            return Response(j as u64);
        }
    }
    Response(prob.len() as u64 - 1)
}

/// `n` i.i.d. pairs with `Y_i | X_i ~ p(· | X_i, θ₀)` exactly.
pub fn simulate_dataset(cfg: &ExperimentConfig, n: usize, seed: u64) -> Result<Dataset<f64>> {
    let model = cfg.model()?;
    let theta0 = cfg.theta0()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let covariates = generate_covariates(cfg, n, &mut rng)?;
    let mut responses = Vec::with_capacity(n);
    for x in covariates.iter() {
        let prob = state_probabilities(&model, x, &theta0)?;
        responses.push(draw_state(&prob, rng.random::<f64>()));
    }
    Dataset::new(cfg.d, responses, covariates)
}
