//! Flat `key = value` experiment configuration (TOML syntax, `#` comments).

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::autologistic::{build_autologistic, Autologistic, AutologisticSpec, Mask};
use crate::error::{Error, Result};
use crate::gibbs::{DensityMode, SamplerSpec, Scan};
use crate::model::ModelFamily;

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum MaskConfig {
    /// `"full"`.
    Named(String),
    /// 1-based site pairs `[[r, s], ...]`; diagonal terms are always free.
    Pairs(Vec<[usize; 2]>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    #[default]
    Uniform,
    /// Standard normal clipped to `[−3, 3]`.
    Normal,
    /// Rows of `covariate_file`, reused cyclically.
    File,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScanConfig {
    #[default]
    Random,
    Symmetric,
    Forward,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ModeConfig {
    #[default]
    Exact,
    Ratio,
}

fn default_low() -> f64 {
    -1.0
}
fn default_high() -> f64 {
    1.0
}
fn default_one() -> usize {
    1
}
fn default_level() -> f64 {
    0.95
}
fn default_grad_tol() -> f64 {
    1e-8
}
fn default_max_iters() -> usize {
    100
}
fn default_lemma_functions() -> usize {
    100
}
fn default_lemma_max_k() -> usize {
    5
}
fn default_lemma_max_lag() -> usize {
    20
}
fn default_a7_m() -> Vec<usize> {
    vec![1_000, 100_000]
}
fn default_a7_grid() -> usize {
    20
}
fn default_a7_radius() -> f64 {
    0.1
}
fn default_a7_replicates() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub d: usize,
    #[serde(default)]
    pub l: usize,
    pub mask: Option<MaskConfig>,
    /// True parameter, packed in model order; zero if absent.
    pub theta0: Option<Vec<f64>>,
    #[serde(default)]
    pub covariates: CovariateKind,
    #[serde(default = "default_low")]
    pub covariate_low: f64,
    #[serde(default = "default_high")]
    pub covariate_high: f64,
    pub covariate_file: Option<PathBuf>,
    #[serde(default = "default_one")]
    pub n: usize,
    #[serde(default = "default_one")]
    pub m: usize,
    pub psi: Option<Vec<f64>>,
    pub x_ref: Option<Vec<f64>>,
    #[serde(default)]
    pub scan: ScanConfig,
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub h_mode: ModeConfig,
    #[serde(default = "default_one")]
    pub replications: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub seed: u64,
    /// Drop `W/m` from the reported sandwich.
    #[serde(default)]
    pub ablate_w: bool,
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    #[serde(default = "default_lemma_functions")]
    pub lemma_functions: usize,
    #[serde(default = "default_lemma_max_k")]
    pub lemma_max_k: usize,
    #[serde(default = "default_lemma_max_lag")]
    pub lemma_max_lag: usize,
    #[serde(default = "default_a7_m")]
    pub a7_m: Vec<usize>,
    #[serde(default = "default_a7_grid")]
    pub a7_grid: usize,
    #[serde(default = "default_a7_radius")]
    pub a7_radius: f64,
    #[serde(default = "default_a7_replicates")]
    pub a7_replicates: usize,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Resolves a path from the config against the config file's directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.d == 0 {
            return bad("d must be at least 1".into());
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level must lie in (0, 1), got {}", self.level));
        }
        if !(self.covariate_low < self.covariate_high) {
            return bad("covariate_low must be below covariate_high".into());
        }
        if self.covariates == CovariateKind::File && self.covariate_file.is_none() {
            return bad("covariates = \"file\" needs covariate_file".into());
        }
        if !(self.grad_tol > 0.0) {
            return bad("grad_tol must be positive".into());
        }
        if let Some(MaskConfig::Named(name)) = &self.mask {
            if name != "full" {
                return bad(format!("unknown mask {name:?}; use \"full\" or a list of pairs"));
            }
        }
        let model = self.model()?;
        let p = ModelFamily::<f64>::param_dim(&model);
        for (key, v) in [("theta0", &self.theta0), ("psi", &self.psi)] {
            if let Some(v) = v {
                if v.len() != p {
                    return bad(format!("{key} has {} entries, the model has {p} parameters", v.len()));
                }
            }
        }
        if let Some(x) = &self.x_ref {
            if x.len() != self.l {
                return bad(format!("x_ref has {} entries, l = {}", x.len(), self.l));
            }
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<AutologisticSpec> {
        let mask = match &self.mask {
            None | Some(MaskConfig::Named(_)) => Mask::Full,
            Some(MaskConfig::Pairs(pairs)) => {
                let mut zero_based: Vec<(usize, usize)> = (0..self.d).map(|r| (r, r)).collect();
                for &[r, s] in pairs {
                    if r == 0 || s == 0 {
                        return Err(Error::Config("mask pairs are 1-based".into()));
                    }
                    zero_based.push((r - 1, s - 1));
                    zero_based.push((s - 1, r - 1));
                }
                Mask::from_pairs(zero_based)
            }
        };
        Ok(AutologisticSpec {
            d: self.d,
            l: self.l,
            mask,
        })
    }

    pub fn model(&self) -> Result<Autologistic> {
        build_autologistic(&self.model_spec()?)
    }

    pub fn param_dim(&self) -> Result<usize> {
        Ok(ModelFamily::<f64>::param_dim(&self.model()?))
    }

    pub fn theta0(&self) -> Result<Vec<f64>> {
        Ok(self.theta0.clone().unwrap_or(vec![0.0; self.param_dim()?]))
    }

    pub fn scan(&self) -> Scan {
        match self.scan {
            ScanConfig::Random => Scan::Random,
            ScanConfig::Symmetric => Scan::SymmetricSystematic,
            ScanConfig::Forward => Scan::ForwardSystematic,
        }
    }

    /// Sampler settings; `x_ref` falls back to `default_x_ref`.
    pub fn sampler(&self, default_x_ref: &[f64], seed: u64) -> Result<SamplerSpec<f64>> {
        let p = self.param_dim()?;
        let x_ref = self.x_ref.clone().unwrap_or_else(|| default_x_ref.to_vec());
        let mut spec = SamplerSpec::new(x_ref, p, seed)
            .with_param(self.psi.clone().unwrap_or(vec![0.0; p]))
            .with_scan(self.scan())
            .with_mode(match self.h_mode {
                ModeConfig::Exact => DensityMode::Exact,
                ModeConfig::Ratio => DensityMode::Ratio,
            });
        spec.burn_in = self.burn_in;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::parse("d = 2\nl = 1\n").unwrap();
        assert_eq!(cfg.level, 0.95);
        assert_eq!(cfg.covariates, CovariateKind::Uniform);
        assert_eq!(cfg.theta0().unwrap(), vec![0.0; 5]);
        assert_eq!(cfg.a7_m, vec![1_000, 100_000]);
        assert_eq!(cfg.scan(), Scan::Random);
    }

    #[test]
    fn full_config_parses() {
        let text = r#"
            # comment
            d = 3
            l = 1
            mask = [[1, 2], [2, 3]]
            theta0 = [0.1, 0.2, 0.0, 0.3, 0.4, 0.5, 0.6, 0.7]
            covariates = "normal"
            n = 50
            m = 500
            scan = "symmetric"
            h_mode = "ratio"
            burn_in = 10
            seed = 9
        "#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        let model = cfg.model().unwrap();
        assert_eq!(model.beta_pairs(), &[(0, 0), (0, 1), (1, 1), (1, 2), (2, 2)]);
        let spec = cfg.sampler(&[0.0], 1).unwrap();
        assert_eq!(spec.scan, Scan::SymmetricSystematic);
        assert_eq!(spec.h_mode, DensityMode::Ratio);
        assert_eq!(spec.burn_in, Some(10));
    }

    #[test]
    fn bad_configs_rejected() {
        for text in [
            "d = 0",
            "d = 2\nlevel = 1.5",
            "d = 2\nunknown_key = 1",
            "d = 2\ntheta0 = [1.0]",
            "d = 2\nmask = \"chain\"",
            "d = 2\ncovariates = \"file\"",
            "d = 2\nmask = [[1, 3]]",
            "d = 2\nscan = \"sideways\"",
            "d = ",
        ] {
            assert!(ExperimentConfig::parse(text).is_err(), "{text}");
        }
    }
}
