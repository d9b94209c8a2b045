//! Sandwich covariance `D⁻¹(V/n + W/m)D⁻¹` of the MCMC maximum likelihood
//! estimator and Wald intervals.
//!
//! `V` is the covariance of the per-observation score, `D` the expected
//! Hessian, and `W` the long-run covariance of
//! `Ψ̄(y) = E_X ∇p(y | X, θ)/h(y)` along the chain. All three are estimated by
//! plug-in at `θ̂`, with `Z(x, θ̂)` replaced by `C_m(x, θ̂)` and `E_X` by the
//! average over the observed covariates.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gibbs::MonteCarloChain;
use crate::linalg::{sample_covariance, Cholesky, Matrix, SymmetricEigen};
use crate::model::{Dataset, ModelFamily};
use crate::objective::{McmlObjective, Order};
use crate::scalar::Scalar;
use crate::stats::normal_quantile;

/// Minimum series length accepted by [`estimate_w`].
pub const MIN_W_SERIES: usize = 100;

/// Plug-in score vectors at `θ̂`.
#[derive(Clone, Debug)]
pub struct ScoreSeries<T> {
    /// `s_i = T(X_i, Y_i) − Σ_k w_ik T(X_i, Y^k)`, one per observation.
    pub scores: Vec<Vec<T>>,
    /// `Ψ̄(Y^k)`, one per chain step.
    pub psi_bar: Vec<Vec<T>>,
}

impl<T: Scalar> ScoreSeries<T> {
    pub fn compute<M: ModelFamily<T> + ?Sized>(objective: &McmlObjective<'_, T, M>, theta_hat: &[T]) -> Self {
        Self {
            scores: objective.scores(theta_hat),
            psi_bar: psi_bar_from(objective, theta_hat),
        }
    }
}

/// Sample covariance (divisor `n − 1`) of the scores.
pub fn estimate_v<T: Scalar>(scores: &[Vec<T>]) -> Result<Matrix<T>> {
    if scores.len() < 2 {
        return Err(Error::TooFewSamples {
            what: "V estimation",
            needed: 2,
            got: scores.len(),
        });
    }
    Ok(sample_covariance(scores))
}

/// The MCMC Hessian at `θ̂`.
pub fn estimate_d<T: Scalar, M: ModelFamily<T> + ?Sized>(
    model: &M,
    chain: &MonteCarloChain<T>,
    data: &Dataset<T>,
    theta_hat: &[T],
) -> Result<Matrix<T>> {
    crate::objective::mcml_hess(model, chain, data, theta_hat)
}

/// `Ψ̄(Y^k)` for every chain step.
pub fn psi_bar_series<T: Scalar, M: ModelFamily<T> + ?Sized>(
    model: &M,
    chain: &MonteCarloChain<T>,
    data: &Dataset<T>,
    theta_hat: &[T],
) -> Result<Vec<Vec<T>>> {
    crate::model::check_theta(model, theta_hat)?;
    let obj = McmlObjective::new(model, chain, data)?;
    Ok(psi_bar_from(&obj, theta_hat))
}

/// `(1/n) Σ_i exp(θ′T(X_i, y) − log h(y) − log C_m(X_i, θ)) [T(X_i, y) − μ_i]`,
/// evaluated once per distinct state and laid out in chain order.
pub fn psi_bar_from<T: Scalar, M: ModelFamily<T> + ?Sized>(
    objective: &McmlObjective<'_, T, M>,
    theta: &[T],
) -> Vec<Vec<T>> {
    let model = objective.model();
    let data = objective.data();
    let ws = objective.weighted();
    let p = model.param_dim();
    let s = ws.distinct();
    let moments = objective.observation_states(theta, Order::Gradient);
    let partials: Vec<Vec<T>> = (0..data.n())
        .collect::<Vec<_>>()
        .par_chunks(64)
        .map(|chunk| {
            let mut acc = vec![T::zero(); s * p];
            let mut t = vec![T::zero(); p];
            for &i in chunk {
                let x = data.covariate(i);
                let om = &moments[i];
                for (j, (&y, &lh)) in ws.states().iter().zip(ws.log_h()).enumerate() {
                    let w = (model.log_f(x, y, theta) - lh - om.log_cm).exp();
                    model.suff_stat_into(x, y, &mut t);
                    for ((a, &tv), &mu) in acc[j * p..(j + 1) * p].iter_mut().zip(&t).zip(&om.mean) {
                        *a += w * (tv - mu);
                    }
                }
            }
            acc
        })
        .collect();
    let mut total = vec![T::zero(); s * p];
    for part in partials {
        for (a, b) in total.iter_mut().zip(part) {
            *a += b;
        }
    }
    let inv_n = T::one() / T::of_usize(data.n());
    total.iter_mut().for_each(|v| *v *= inv_n);
    ws.step_index()
        .iter()
        .map(|&j| total[j as usize * p..(j as usize + 1) * p].to_vec())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BatchLayout {
    pub batches: usize,
    pub batch_len: usize,
}

/// Batch-means long-run covariance with `⌊√m⌋` batches.
pub fn estimate_w<T: Scalar>(series: &[Vec<T>]) -> Result<(Matrix<T>, BatchLayout)> {
    let m = series.len();
    if m < MIN_W_SERIES {
        return Err(Error::TooFewSamples {
            what: "W estimation",
            needed: MIN_W_SERIES,
            got: m,
        });
    }
    let batches = (m as f64).sqrt().floor() as usize;
    let batch_len = m / batches;
    let p = series[0].len();
    let means: Vec<Vec<T>> = series
        .chunks_exact(batch_len)
        .take(batches)
        .map(|chunk| {
            let mut mean = vec![T::zero(); p];
            for v in chunk {
                for (a, &b) in mean.iter_mut().zip(v) {
                    *a += b;
                }
            }
            let len = T::of_usize(batch_len);
            mean.iter_mut().for_each(|a| *a /= len);
            mean
        })
        .collect();
    let w = sample_covariance(&means).scale(T::of_usize(batch_len));
    Ok((w, BatchLayout { batches, batch_len }))
}

/// Geyer's initial positive sequence estimate of the long-run variance of a
/// scalar series.
pub fn initial_positive_sequence<T: Scalar>(series: &[T]) -> T {
    let m = series.len();
    let mean = series.iter().copied().sum::<T>() / T::of_usize(m);
    let c: Vec<T> = series.iter().map(|&v| v - mean).collect();
    let gamma = |lag: usize| -> T {
        c[..m - lag]
            .iter()
            .zip(&c[lag..])
            .map(|(&a, &b)| a * b)
            .sum::<T>()
            / T::of_usize(m)
    };
    let mut total = -gamma(0);
    let mut k = 0;
    while 2 * k + 1 < m {
        let pair = gamma(2 * k) + gamma(2 * k + 1);
        if pair <= T::zero() {
            break;
        }
        total += T::of(2.0) * pair;
        k += 1;
    }
    total.max(T::zero())
}

fn negated_cholesky<T: Scalar>(d_hat: &Matrix<T>) -> Result<Cholesky<T>> {
    let neg = d_hat.scale(-T::one()).symmetrized();
    let definite = SymmetricEigen::new(&neg).min_value() > T::zero();
    match Cholesky::new(&neg) {
        Some(ch) if definite => Ok(ch),
        _ => Err(Error::NotNegativeDefinite {
            what: "D_hat",
            eigenvalues: SymmetricEigen::new(&d_hat.symmetrized())
                .values
                .iter()
                .map(|v| v.as_f64())
                .collect(),
        }),
    }
}

/// `D⁻¹(V/n + W/m)D⁻¹` via two Cholesky solves.
pub fn sandwich_cov<T: Scalar>(v_hat: &Matrix<T>, d_hat: &Matrix<T>, w_hat: &Matrix<T>, n: usize, m: usize) -> Result<Matrix<T>> {
    let ch = negated_cholesky(d_hat)?;
    let middle = middle_term(v_hat, w_hat, n, m);
    let left = ch.solve_matrix(&middle);
    Ok(ch.solve_matrix(&left.transpose()).symmetrized())
}

fn middle_term<T: Scalar>(v_hat: &Matrix<T>, w_hat: &Matrix<T>, n: usize, m: usize) -> Matrix<T> {
    let mut middle = v_hat.scale(T::one() / T::of_usize(n));
    middle.add_assign_scaled(w_hat, T::one() / T::of_usize(m));
    middle.symmetrized()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interval<T> {
    pub lower: T,
    pub upper: T,
}

impl<T: Scalar> Interval<T> {
    pub fn contains(&self, v: T) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// `θ̂_j ± z_{(1+level)/2} √Σ_jj`.
pub fn wald_intervals<T: Scalar>(theta_hat: &[T], sandwich: &Matrix<T>, level: f64) -> Result<Vec<Interval<T>>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level must lie in (0, 1), got {level}")));
    }
    if sandwich.rows() != theta_hat.len() || !sandwich.is_square() {
        return Err(Error::Dimension {
            arg: "sandwich",
            expected: theta_hat.len(),
            found: sandwich.rows(),
        });
    }
    let z = T::of(normal_quantile(0.5 * (1.0 + level)));
    theta_hat
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let var = sandwich[(j, j)];
            if !(var >= T::zero()) {
                return Err(Error::InvalidArgument(format!("sandwich diagonal {j} is {var}")));
            }
            let half = z * var.sqrt();
            Ok(Interval {
                lower: t - half,
                upper: t + half,
            })
        })
        .collect()
}

/// All pieces of the asymptotic covariance at `θ̂`.
#[derive(Clone, Debug)]
pub struct AsymptoticCovariance<T> {
    pub v_hat: Matrix<T>,
    pub d_hat: Matrix<T>,
    pub w_hat: Matrix<T>,
    pub sandwich: Matrix<T>,
    pub n: usize,
    pub m: usize,
    pub batches: BatchLayout,
}

impl<T: Scalar> AsymptoticCovariance<T> {
    /// Estimates `V`, `D`, `W` and the sandwich from a fitted objective.
    pub fn estimate<M: ModelFamily<T> + ?Sized>(objective: &McmlObjective<'_, T, M>, theta_hat: &[T]) -> Result<Self> {
        let series = ScoreSeries::compute(objective, theta_hat);
        let v_hat = estimate_v(&series.scores)?;
        let (w_hat, batches) = estimate_w(&series.psi_bar)?;
        let d_hat = objective.hessian(theta_hat);
        let n = objective.data().n();
        let m = objective.weighted().m();
        let sandwich = sandwich_cov(&v_hat, &d_hat, &w_hat, n, m)?;
        Ok(Self {
            v_hat,
            d_hat,
            w_hat,
            sandwich,
            n,
            m,
            batches,
        })
    }

    /// `D⁻¹(V/n)D⁻¹`, the covariance that ignores Monte Carlo error.
    pub fn sandwich_without_w(&self) -> Result<Matrix<T>> {
        let zero = Matrix::zeros(self.w_hat.rows(), self.w_hat.cols());
        sandwich_cov(&self.v_hat, &self.d_hat, &zero, self.n, self.m)
    }

    /// `(V/n + W/m)^{−1/2} D (θ̂ − θ₀)`, approximately standard normal.
    pub fn standardize(&self, theta_hat: &[T], theta0: &[T]) -> Result<Vec<T>> {
        let diff: Vec<T> = theta_hat.iter().zip(theta0).map(|(&a, &b)| a - b).collect();
        let middle = middle_term(&self.v_hat, &self.w_hat, self.n, self.m);
        let eig = SymmetricEigen::new(&middle);
        if !(eig.min_value() > T::zero()) {
            return Err(Error::NotNegativeDefinite {
                what: "V_hat/n + W_hat/m",
                eigenvalues: eig.values.iter().map(|v| v.as_f64()).collect(),
            });
        }
        let inv_sqrt = eig.reconstruct_with(|v| T::one() / v.sqrt());
        Ok(inv_sqrt.matvec(&self.d_hat.matvec(&diff)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autologistic::{build_autologistic, AutologisticSpec};
    use crate::gibbs::{run_chain, DensityMode, SamplerSpec};
    use crate::model::{Covariates, Response};
    use crate::oracle::ExactObjective;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn v_examples() {
        let v = estimate_v(&[vec![1.0], vec![-1.0]]).unwrap();
        assert_abs_diff_eq!(v[(0, 0)], 2.0, epsilon = 1e-15);
        let v = estimate_v(&vec![vec![0.3, 0.1]; 5]).unwrap();
        assert_eq!(v.max_abs(), 0.0);
        assert!(estimate_v(&[vec![1.0]]).is_err());
    }

    #[test]
    fn w_examples() {
        let constant = vec![vec![1.5, -2.0]; 400];
        let (w, layout) = estimate_w(&constant).unwrap();
        assert_eq!(w.max_abs(), 0.0);
        assert_eq!(layout, BatchLayout { batches: 20, batch_len: 20 });
        assert!(estimate_w(&vec![vec![0.0]; 99]).is_err());
        assert!(estimate_w(&vec![vec![0.0]; 1]).is_err());
    }

    #[test]
    fn w_of_ar1() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = 0.5;
        let mut x = 0.0;
        let series: Vec<Vec<f64>> = (0..1_000_000)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                x = a * x + e;
                vec![x]
            })
            .collect();
        let (w, _) = estimate_w(&series).unwrap();
        assert!((w[(0, 0)] / 4.0 - 1.0).abs() <= 0.15, "{}", w[(0, 0)]);
        let flat: Vec<f64> = series.iter().map(|v| v[0]).collect();
        let ips = initial_positive_sequence(&flat);
        assert!((ips / 4.0 - 1.0).abs() <= 0.15, "{ips}");
    }

    #[test]
    fn w_of_iid_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let series: Vec<Vec<f64>> = (0..40_000)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                vec![a, 0.5 * a + b]
            })
            .collect();
        let (w, _) = estimate_w(&series).unwrap();
        let s = sample_covariance(&series);
        assert!(w.sub(&s).frobenius() / s.frobenius() <= 0.2);
        assert!(SymmetricEigen::new(&w).min_value() >= -1e-10);
    }

    #[test]
    fn sandwich_examples() {
        let s = sandwich_cov(
            &Matrix::from_diag(&[4.0]),
            &Matrix::from_diag(&[-2.0]),
            &Matrix::from_diag(&[9.0]),
            100,
            100,
        )
        .unwrap();
        assert_abs_diff_eq!(s[(0, 0)], 0.0325, epsilon = 1e-15);

        let v = Matrix::from_rows(&[[2.0, 0.3], [0.3, 1.0]]);
        let s = sandwich_cov(&v, &v.scale(-1.0), &Matrix::zeros(2, 2), 50, 10).unwrap();
        let inv = Cholesky::new(&v).unwrap().solve_matrix(&Matrix::identity(2)).scale(1.0 / 50.0);
        assert!(s.sub(&inv).max_abs() <= 1e-14);

        let err = sandwich_cov(&v, &Matrix::zeros(2, 2), &v, 10, 10).unwrap_err();
        assert!(matches!(err, Error::NotNegativeDefinite { .. }));
        let indefinite = Matrix::from_diag(&[-1.0, 0.5]);
        assert!(sandwich_cov(&v, &indefinite, &v, 10, 10).is_err());
    }

    #[test]
    fn sandwich_decreases_in_n_and_m() {
        let v = Matrix::from_rows(&[[2.0, 0.3, 0.1], [0.3, 1.0, -0.2], [0.1, -0.2, 0.7]]);
        let w = Matrix::from_rows(&[[5.0, 1.0, 0.0], [1.0, 3.0, 0.4], [0.0, 0.4, 2.0]]);
        let d = Matrix::from_rows(&[[-1.5, 0.2, 0.0], [0.2, -1.0, 0.1], [0.0, 0.1, -0.8]]);
        let base = sandwich_cov(&v, &d, &w, 100, 100).unwrap();
        let more_n = sandwich_cov(&v, &d, &w, 200, 100).unwrap();
        let more_m = sandwich_cov(&v, &d, &w, 100, 200).unwrap();
        for j in 0..3 {
            assert!(more_n[(j, j)] < base[(j, j)]);
            assert!(more_m[(j, j)] < base[(j, j)]);
        }
        let huge_m = sandwich_cov(&v, &d, &w, 100, usize::MAX / 4).unwrap();
        let no_w = sandwich_cov(&v, &d, &Matrix::zeros(3, 3), 100, 1).unwrap();
        assert!(huge_m.sub(&no_w).max_abs() <= 1e-12);
    }

    #[test]
    fn wald_examples() {
        let iv = wald_intervals(&[0.0], &Matrix::from_diag(&[1.0]), 0.95).unwrap();
        assert_abs_diff_eq!(iv[0].lower, -1.959964, epsilon = 1e-6);
        assert_abs_diff_eq!(iv[0].upper, 1.959964, epsilon = 1e-6);
        let iv = wald_intervals(&[1.0], &Matrix::from_diag(&[4.0]), 0.5).unwrap();
        assert_abs_diff_eq!(iv[0].upper - 1.0, 0.674490 * 2.0, epsilon = 1e-5);
        let iv = wald_intervals(&[2.5], &Matrix::from_diag(&[0.0]), 0.9).unwrap();
        assert_eq!((iv[0].lower, iv[0].upper), (2.5, 2.5));
        assert!(wald_intervals(&[0.0], &Matrix::from_diag(&[-1.0]), 0.9).is_err());
        assert!(wald_intervals(&[0.0], &Matrix::from_diag(&[1.0]), 1.0).is_err());
        // half-width agrees with the statrs quantile
        let n = Normal::new(0.0, 1.0).unwrap();
        let iv = wald_intervals(&[0.0], &Matrix::from_diag(&[1.0]), 0.8).unwrap();
        assert_abs_diff_eq!(iv[0].upper, n.inverse_cdf(0.9), epsilon = 1e-9);
    }

    fn simulate(model: &crate::autologistic::Autologistic, theta: &[f64], n: usize, seed: u64) -> Dataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut responses = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            let x = vec![rng.random_range(-1.0..1.0)];
            let prob = crate::oracle::state_probabilities(model, &x, theta).unwrap();
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut y = prob.len() - 1;
            for (j, p) in prob.iter().enumerate() {
                acc += p;
                if u < acc {
                    y = j;
                    break;
                }
            }
            responses.push(Response(y as u64));
            rows.push(x);
        }
        Dataset::new(3, responses, Covariates::new(1, rows).unwrap()).unwrap()
    }

    fn theta0() -> Vec<f64> {
        vec![-0.5, 0.3, -0.2, 0.2, 0.25, -0.3, 0.8, -0.6, 0.4]
    }

    #[test]
    fn v_and_d_match_enumeration() {
        let model = build_autologistic(&AutologisticSpec::full(3, 1)).unwrap();
        let theta = theta0();
        let data = simulate(&model, &theta, 5000, 11);
        let exact = ExactObjective::new(&model, &data).unwrap();
        let info = exact.information(&theta);
        let v_hat = estimate_v(&exact.scores(&theta).unwrap()).unwrap();
        assert!(v_hat.sub(&info).frobenius() / info.frobenius() <= 0.15);

        let spec = SamplerSpec::new(vec![0.0], 9, 12);
        let chain = run_chain(&model, &spec, 100_000).unwrap();
        let d_hat = estimate_d(&model, &chain, &data, &theta).unwrap();
        let d_exact = info.scale(-1.0);
        assert!(d_hat.sub(&d_exact).frobenius() / d_exact.frobenius() <= 0.10);

        // correct specification: D ≈ −V and −D⁻¹V has eigenvalues near 1
        assert!(d_hat.add(&v_hat).frobenius() / v_hat.frobenius() <= 0.2);
        let ch = Cholesky::new(&d_hat.scale(-1.0)).unwrap();
        let whitened = ch.whiten(&v_hat);
        let eig = SymmetricEigen::new(&whitened);
        assert!(eig.values.iter().all(|&v| (0.7..=1.4).contains(&v)), "{:?}", eig.values);
    }

    #[test]
    fn identical_chain_states_refuse_inference() {
        let model = build_autologistic(&AutologisticSpec::full(3, 1)).unwrap();
        let data = simulate(&model, &theta0(), 100, 3);
        let spec = SamplerSpec::new(vec![0.0], 9, 0);
        let chain = MonteCarloChain::from_parts(3, vec![Response(5); 200], vec![-2.0; 200], spec, None).unwrap();
        let d = estimate_d(&model, &chain, &data, &theta0()).unwrap();
        assert_eq!(d.max_abs(), 0.0);
        let obj = McmlObjective::new(&model, &chain, &data).unwrap();
        assert!(matches!(
            AsymptoticCovariance::estimate(&obj, &theta0()),
            Err(Error::NotNegativeDefinite { .. })
        ));
    }

    #[test]
    fn psi_bar_at_reference_point() {
        let model = build_autologistic(&AutologisticSpec::full(3, 1)).unwrap();
        let psi = theta0();
        let x_ref = 0.3;
        let spec = SamplerSpec::new(vec![x_ref], 9, 20).with_param(psi.clone());
        let chain = run_chain(&model, &spec, 2_000).unwrap();
        let responses = (0..50).map(|i| Response(i % 8)).collect();
        let data = Dataset::new(3, responses, Covariates::new(1, vec![vec![x_ref]; 50]).unwrap()).unwrap();
        let series = psi_bar_series(&model, &chain, &data, &psi).unwrap();
        assert_eq!(series.len(), chain.m());
        let obj = McmlObjective::new(&model, &chain, &data).unwrap();
        let om = &obj.observation_states(&psi, Order::Gradient)[0];
        let mut mean = vec![0.0; 9];
        for (k, y) in chain.states().iter().enumerate() {
            let t = model.suff_stat(&[x_ref], *y).unwrap();
            for j in 0..9 {
                assert_abs_diff_eq!(series[k][j], t[j] - om.mean[j], epsilon = 1e-10);
                mean[j] += series[k][j] / chain.m() as f64;
            }
        }
        // weights are uniform so the series is centered exactly
        assert!(mean.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn psi_bar_ratio_mode_is_identical() {
        let model = build_autologistic(&AutologisticSpec::full(3, 1)).unwrap();
        let data = simulate(&model, &theta0(), 200, 30);
        let spec = SamplerSpec::new(vec![0.0], 9, 31).with_param(vec![0.1; 9]);
        let chain = run_chain(&model, &spec, 3_000).unwrap();
        let a = psi_bar_series(&model, &chain, &data, &theta0()).unwrap();
        let b = psi_bar_series(&model, &chain.to_ratio_mode(), &data, &theta0()).unwrap();
        for (u, v) in a.iter().zip(&b) {
            for (p, q) in u.iter().zip(v) {
                assert_abs_diff_eq!(p, q, epsilon = 1e-10);
            }
        }
        let run_ratio = run_chain(&model, &spec.with_mode(DensityMode::Ratio), 3_000).unwrap();
        let c = psi_bar_series(&model, &run_ratio, &data, &theta0()).unwrap();
        assert_abs_diff_eq!(a[17][3], c[17][3], epsilon = 1e-10);
    }

    #[test]
    fn psi_bar_is_centered_along_the_chain() {
        // the self-normalized weights make Σ_k Ψ̄(Y^k) vanish for every m
        let model = build_autologistic(&AutologisticSpec::full(3, 1)).unwrap();
        let data = simulate(&model, &theta0(), 100, 40);
        for &m in &[1usize, 100, 10_000] {
            let spec = SamplerSpec::new(vec![0.0], 9, 500 + m as u64);
            let chain = run_chain(&model, &spec, m).unwrap();
            let s = psi_bar_series(&model, &chain, &data, &theta0()).unwrap();
            assert_eq!(s.len(), m);
            for j in 0..9 {
                let mean = s.iter().map(|v| v[j]).sum::<f64>() / m as f64;
                assert!(mean.abs() < 1e-10, "m = {m}: {mean}");
            }
        }
    }
}
