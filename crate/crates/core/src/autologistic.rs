//! The autologistic model with covariates.
//!
//! `p(y|x) ∝ exp(Σ_{r,s} β_{rs} y_r y_s + Σ_{r,j} α_{rj} y_r x_j)` with `β`
//! symmetric. The parameter packs the upper triangle of `β` (diagonal
//! included, row-major over `r ≤ s`) followed by `α` row-major. Off-diagonal
//! statistics carry a factor 2 so that `θ′T` reproduces the full double sum.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{ModelFamily, Response, MAX_RESPONSE_DIM};
use crate::scalar::Scalar;

/// Which entries of `β` are free parameters.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum Mask {
    /// Every pair, diagonal included.
    #[default]
    Full,
    /// Explicit set of ordered site pairs (0-based). Must be symmetric;
    /// a diagonal entry `(r, r)` is free only when listed.
    Pairs(BTreeSet<(usize, usize)>),
}

impl Mask {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Mask::Pairs(pairs.into_iter().collect())
    }

    /// Nearest-neighbour chain `0-1-…-(d-1)` plus all diagonal entries.
    pub fn chain(d: usize) -> Self {
        let mut set = BTreeSet::new();
        for r in 0..d {
            set.insert((r, r));
            if r + 1 < d {
                set.insert((r, r + 1));
                set.insert((r + 1, r));
            }
        }
        Mask::Pairs(set)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AutologisticSpec {
    pub d: usize,
    pub l: usize,
    pub mask: Mask,
}

impl AutologisticSpec {
    pub fn full(d: usize, l: usize) -> Self {
        Self { d, l, mask: Mask::Full }
    }
}

/// Compiled autologistic model. Scalar-agnostic: it implements
/// [`ModelFamily`] for every [`Scalar`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Autologistic {
    d: usize,
    l: usize,
    /// Free `β` entries `(r, s)` with `r ≤ s`, in parameter order.
    beta_pairs: Vec<(usize, usize)>,
    /// Parameter index of `β_{ss}` if free.
    diag_index: Vec<Option<usize>>,
    /// For each site, `(parameter index, neighbour site)` of free off-diagonal entries.
    neighbours: Vec<Vec<(usize, usize)>>,
}

/// Compiles a spec into a model, validating the mask.
pub fn build_autologistic(spec: &AutologisticSpec) -> Result<Autologistic> {
    let d = spec.d;
    if d == 0 || d > MAX_RESPONSE_DIM {
        return Err(Error::InvalidArgument(format!(
            "response dimension must be in 1..={MAX_RESPONSE_DIM}, got {d}"
        )));
    }
    if let Mask::Pairs(pairs) = &spec.mask {
        for &(r, s) in pairs {
            if r >= d || s >= d {
                return Err(Error::InvalidMask(format!("pair ({r}, {s}) out of range for d = {d}")));
            }
            if !pairs.contains(&(s, r)) {
                return Err(Error::InvalidMask(format!("pair ({r}, {s}) present but ({s}, {r}) missing")));
            }
        }
    }
    let allowed = |r: usize, s: usize| match &spec.mask {
        Mask::Full => true,
        Mask::Pairs(p) => p.contains(&(r, s)),
    };
    let mut beta_pairs = Vec::new();
    let mut diag_index = vec![None; d];
    let mut neighbours = vec![Vec::new(); d];
    for r in 0..d {
        for s in r..d {
            if !allowed(r, s) {
                continue;
            }
            let k = beta_pairs.len();
            beta_pairs.push((r, s));
            if r == s {
                diag_index[r] = Some(k);
            } else {
                neighbours[r].push((k, s));
                neighbours[s].push((k, r));
            }
        }
    }
    Ok(Autologistic {
        d,
        l: spec.l,
        beta_pairs,
        diag_index,
        neighbours,
    })
}

impl Autologistic {
    pub fn beta_pairs(&self) -> &[(usize, usize)] {
        &self.beta_pairs
    }

    pub fn n_beta(&self) -> usize {
        self.beta_pairs.len()
    }

    /// Parameter index of `α_{r j}`.
    pub fn alpha_index(&self, r: usize, j: usize) -> usize {
        self.beta_pairs.len() + r * self.l + j
    }

    /// Parameter index of `β_{r s}` (either order), if that entry is free.
    pub fn beta_index(&self, r: usize, s: usize) -> Option<usize> {
        let key = (r.min(s), r.max(s));
        self.beta_pairs.iter().position(|&p| p == key)
    }

    /// Human-readable names (`beta_1_2`, `alpha_3_1`, 1-based) in parameter order.
    pub fn param_names(&self) -> Vec<String> {
        self.beta_pairs
            .iter()
            .map(|&(r, s)| format!("beta_{}_{}", r + 1, s + 1))
            .chain((0..self.d).flat_map(|r| (0..self.l).map(move |j| format!("alpha_{}_{}", r + 1, j + 1))))
            .collect()
    }
}

impl<T: Scalar> ModelFamily<T> for Autologistic {
    fn param_dim(&self) -> usize {
        self.beta_pairs.len() + self.d * self.l
    }

    fn response_dim(&self) -> usize {
        self.d
    }

    fn covariate_dim(&self) -> usize {
        self.l
    }

    fn suff_stat_into(&self, x: &[T], y: Response, out: &mut [T]) {
        let two = T::of(2.0);
        for (k, &(r, s)) in self.beta_pairs.iter().enumerate() {
            out[k] = if r == s {
                y.bit(r)
            } else if y.get(r) && y.get(s) {
                two
            } else {
                T::zero()
            };
        }
        let base = self.beta_pairs.len();
        for r in 0..self.d {
            let yr: T = y.bit(r);
            let row = &mut out[base + r * self.l..base + (r + 1) * self.l];
            for (o, &xj) in row.iter_mut().zip(x) {
                *o = yr * xj;
            }
        }
    }

    fn log_f(&self, x: &[T], y: Response, theta: &[T]) -> T {
        // Same accumulation order as `dot(theta, T)`; skipped terms are exact zeros.
        let two = T::of(2.0);
        let mut acc = T::zero();
        for (k, &(r, s)) in self.beta_pairs.iter().enumerate() {
            if r == s {
                if y.get(r) {
                    acc += theta[k] * T::one();
                }
            } else if y.get(r) && y.get(s) {
                acc += theta[k] * two;
            }
        }
        let base = self.beta_pairs.len();
        for r in 0..self.d {
            if !y.get(r) {
                continue;
            }
            let row = &theta[base + r * self.l..base + (r + 1) * self.l];
            for (&a, &xj) in row.iter().zip(x) {
                acc += a * (T::one() * xj);
            }
        }
        acc
    }

    fn log_odds(&self, x: &[T], y: Response, theta: &[T], site: usize) -> T {
        let two = T::of(2.0);
        let mut delta = self.diag_index[site].map_or(T::zero(), |k| theta[k]);
        for &(k, other) in &self.neighbours[site] {
            if y.get(other) {
                delta += two * theta[k];
            }
        }
        let base = self.beta_pairs.len() + site * self.l;
        for (&a, &xj) in theta[base..base + self.l].iter().zip(x) {
            delta += a * xj;
        }
        delta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::dot;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Unpacked double sums `Σ β_rs y_r y_s + Σ α_rj y_r x_j` from full matrices.
    fn unpacked_sum(beta: &[Vec<f64>], alpha: &[Vec<f64>], y: &[f64], x: &[f64]) -> f64 {
        let mut s = 0.0;
        for r in 0..y.len() {
            for t in 0..y.len() {
                s += beta[r][t] * y[r] * y[t];
            }
            for j in 0..x.len() {
                s += alpha[r][j] * y[r] * x[j];
            }
        }
        s
    }

    /// Packs symmetric `β` and `α` per the documented layout.
    fn pack(beta: &[Vec<f64>], alpha: &[Vec<f64>]) -> Vec<f64> {
        let d = beta.len();
        let mut theta = Vec::new();
        for r in 0..d {
            for s in r..d {
                theta.push(beta[r][s]);
            }
        }
        for row in alpha {
            theta.extend_from_slice(row);
        }
        theta
    }

    #[test]
    fn param_dims() {
        let m = build_autologistic(&AutologisticSpec::full(1, 1)).unwrap();
        assert_eq!(ModelFamily::<f64>::param_dim(&m), 2);
        let m = build_autologistic(&AutologisticSpec::full(4, 2)).unwrap();
        assert_eq!(ModelFamily::<f64>::param_dim(&m), 18);
        let spec = AutologisticSpec {
            d: 3,
            l: 0,
            mask: Mask::chain(3),
        };
        let m = build_autologistic(&spec).unwrap();
        assert_eq!(ModelFamily::<f64>::param_dim(&m), 5);
        assert_eq!(m.beta_pairs(), &[(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)]);
    }

    #[test]
    fn asymmetric_mask_rejected() {
        let spec = AutologisticSpec {
            d: 3,
            l: 0,
            mask: Mask::from_pairs([(0, 1)]),
        };
        assert!(matches!(build_autologistic(&spec), Err(Error::InvalidMask(_))));
        let spec = AutologisticSpec {
            d: 2,
            l: 0,
            mask: Mask::from_pairs([(0, 5), (5, 0)]),
        };
        assert!(matches!(build_autologistic(&spec), Err(Error::InvalidMask(_))));
    }

    #[test]
    fn unnorm_logf_examples() {
        let m = build_autologistic(&AutologisticSpec::full(1, 1)).unwrap();
        assert_eq!(m.unnorm_logf(&[2.0], Response(1), &[0.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(m.unnorm_logf(&[2.0], Response(1), &[0.5, -1.0]).unwrap(), -1.5);

        let m = build_autologistic(&AutologisticSpec::full(2, 2)).unwrap();
        let theta = [0.3, 0.2, -0.1, 0.4, 0.0, 0.1, 0.0];
        let x = [1.0, -1.0];
        let beta = vec![vec![0.3, 0.2], vec![0.2, -0.1]];
        let alpha = vec![vec![0.4, 0.0], vec![0.1, 0.0]];
        assert_eq!(pack(&beta, &alpha), theta.to_vec());
        let expected = unpacked_sum(&beta, &alpha, &[1.0, 1.0], &x);
        assert_abs_diff_eq!(expected, 1.1, epsilon = 1e-15);
        assert_abs_diff_eq!(m.unnorm_logf(&x, Response(0b11), &theta).unwrap(), expected, epsilon = 1e-15);
    }

    #[test]
    fn suff_stat_examples() {
        let m = build_autologistic(&AutologisticSpec::full(2, 1)).unwrap();
        let t = m.suff_stat(&[2.0], Response::from_bits(&[true, false])).unwrap();
        assert_eq!(t, vec![1.0, 0.0, 0.0, 2.0, 0.0]);
        let t = m.suff_stat(&[2.0], Response::from_bits(&[true, true])).unwrap();
        assert_eq!(t, vec![1.0, 2.0, 1.0, 2.0, 2.0]);
        let t = m.suff_stat(&[-3.0], Response::ZERO).unwrap();
        assert!(t.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_errors() {
        let m = build_autologistic(&AutologisticSpec::full(2, 1)).unwrap();
        let err = m.unnorm_logf(&[1.0, 2.0], Response(0), &[0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Dimension { arg: "x", .. }));
        let err = m.unnorm_logf(&[1.0], Response(0), &[0.0; 4]).unwrap_err();
        assert!(matches!(err, Error::Dimension { arg: "theta", .. }));
        let err = m.unnorm_logf(&[1.0], Response(0b100), &[0.0; 5]).unwrap_err();
        assert!(matches!(err, Error::Dimension { arg: "y", .. }));
        let err = m.full_conditional(&[0.0; 5], &[1.0], Response(0), 2).unwrap_err();
        assert!(matches!(err, Error::SiteOutOfRange { site: 2, d: 2 }));
    }

    #[test]
    fn full_conditional_examples() {
        let m = build_autologistic(&AutologisticSpec::full(3, 1)).unwrap();
        for y in 0..8u64 {
            for s in 0..3 {
                let p = m.full_conditional(&[0.0; 9], &[0.7], Response(y), s).unwrap();
                assert_eq!(p, 0.5);
            }
        }
        let m = build_autologistic(&AutologisticSpec::full(1, 1)).unwrap();
        let p = m.full_conditional(&[0.5, -1.0], &[2.0], Response(0), 0).unwrap();
        assert_abs_diff_eq!(p, 0.182_425_523_806_356_35, epsilon = 1e-15);
    }

    #[test]
    fn masked_model_matches_full_model_with_zeros() {
        let spec = AutologisticSpec {
            d: 3,
            l: 1,
            mask: Mask::chain(3),
        };
        let masked = build_autologistic(&spec).unwrap();
        let full = build_autologistic(&AutologisticSpec::full(3, 1)).unwrap();
        // chain: (0,0),(0,1),(1,1),(1,2),(2,2) ; full adds (0,2) at index 2
        let tm = [0.2, -0.3, 0.5, 0.1, -0.4, 0.3, 0.6, -0.2];
        let tf = [0.2, -0.3, 0.0, 0.5, 0.1, -0.4, 0.3, 0.6, -0.2];
        for y in 0..8u64 {
            let a = masked.unnorm_logf(&[0.9], Response(y), &tm).unwrap();
            let b = full.unnorm_logf(&[0.9], Response(y), &tf).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
            for s in 0..3 {
                let a = masked.log_odds(&[0.9], Response(y), &tm, s);
                let b = full.log_odds(&[0.9], Response(y), &tf, s);
                assert_abs_diff_eq!(a, b, epsilon = 1e-15);
            }
        }
    }

    fn fixture() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, u64)> {
        (1usize..=4, 0usize..=3).prop_flat_map(|(d, l)| {
            let p = d * (d + 1) / 2 + d * l;
            (
                Just(d),
                Just(l),
                proptest::collection::vec(-2.0f64..2.0, p),
                proptest::collection::vec(-3.0f64..3.0, l),
                0u64..(1u64 << d),
            )
        })
    }

    proptest! {
        #[test]
        fn logf_is_inner_product_with_suff_stat((d, l, theta, x, y) in fixture()) {
            let m = build_autologistic(&AutologisticSpec::full(d, l)).unwrap();
            let t = m.suff_stat(&x, Response(y)).unwrap();
            prop_assert_eq!(t.len(), theta.len());
            let a = m.unnorm_logf(&x, Response(y), &theta).unwrap();
            prop_assert_eq!(a, dot(&theta, &t));
            // twice, bit-identical
            prop_assert_eq!(a.to_bits(), m.unnorm_logf(&x, Response(y), &theta).unwrap().to_bits());
        }

        #[test]
        fn suff_stat_matches_unpacked_double_sum((d, l, theta, x, y) in fixture()) {
            let m = build_autologistic(&AutologisticSpec::full(d, l)).unwrap();
            let mut beta = vec![vec![0.0; d]; d];
            let mut k = 0;
            for r in 0..d {
                for s in r..d {
                    beta[r][s] = theta[k];
                    beta[s][r] = theta[k];
                    k += 1;
                }
            }
            let alpha: Vec<Vec<f64>> = (0..d).map(|r| theta[k + r * l..k + (r + 1) * l].to_vec()).collect();
            let yv: Vec<f64> = (0..d).map(|s| if (y >> s) & 1 == 1 { 1.0 } else { 0.0 }).collect();
            let expected = unpacked_sum(&beta, &alpha, &yv, &x);
            let got = m.unnorm_logf(&x, Response(y), &theta).unwrap();
            prop_assert!((got - expected).abs() <= 1e-12);
        }

        #[test]
        fn linear_in_theta((d, l, theta, x, y) in fixture(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let m = build_autologistic(&AutologisticSpec::full(d, l)).unwrap();
            let other: Vec<f64> = theta.iter().map(|v| 0.5 - v * 0.3).collect();
            let mix: Vec<f64> = theta.iter().zip(&other).map(|(u, v)| a * u + b * v).collect();
            let lhs = m.unnorm_logf(&x, Response(y), &mix).unwrap();
            let rhs = a * m.unnorm_logf(&x, Response(y), &theta).unwrap()
                + b * m.unnorm_logf(&x, Response(y), &other).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn fast_log_odds_matches_generic_difference((d, l, theta, x, y) in fixture(), site in 0usize..4) {
            let site = site % d;
            let m = build_autologistic(&AutologisticSpec::full(d, l)).unwrap();
            let fast = m.log_odds(&x, Response(y), &theta, site);
            let slow = m.log_f(&x, Response(y).with(site, true), &theta)
                - m.log_f(&x, Response(y).with(site, false), &theta);
            prop_assert!((fast - slow).abs() <= 1e-12);
        }

        #[test]
        fn exchangeable_sites_share_conditionals(b_diag in -1.0f64..1.0, b_pair in -1.0f64..1.0,
                                                 b_third in -1.0f64..1.0, a in -1.0f64..1.0,
                                                 x in -2.0f64..2.0, y in 0u64..8) {
            // Sites 0 and 1 have identical β rows and covariate couplings.
            let m = build_autologistic(&AutologisticSpec::full(3, 1)).unwrap();
            let theta = [b_diag, b_pair, b_third, b_diag, b_third, 0.3, a, a, -0.4];
            let y = Response(y);
            let swapped = y.with(0, y.get(1)).with(1, y.get(0));
            let p0 = m.full_conditional(&theta, &[x], y, 0).unwrap();
            let p1 = m.full_conditional(&theta, &[x], swapped, 1).unwrap();
            prop_assert!((p0 - p1).abs() <= 1e-15);
            let p2 = m.full_conditional(&theta, &[x], y, 2).unwrap();
            let p2s = m.full_conditional(&theta, &[x], swapped, 2).unwrap();
            prop_assert!((p2 - p2s).abs() <= 1e-15);
        }
    }
}
