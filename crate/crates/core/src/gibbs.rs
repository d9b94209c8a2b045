//! Gibbs sampling of the instrumental chain `Y¹,…,Y^m`.
//!
//! The stationary density is the model itself at a reference point,
//! `h(y) ∝ exp(ψ′T(x_ref, y))`. One chain step is one sweep of `d` single-site
//! updates; the chain starts from the all-zeros state and the first `burn_in`
//! sweeps are discarded.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{check_theta, check_x, check_xy, ModelFamily, Response};
use crate::oracle::{exact_log_z, ENUMERATION_CAP};
use crate::scalar::{logistic, Scalar};

/// Site visiting order within one sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scan {
    /// `d` updates at uniformly chosen sites. Reversible.
    #[default]
    Random,
    /// Sites `1..d` then back down to `1`. Reversible.
    SymmetricSystematic,
    /// Sites `1..d` once. Not reversible in general; kept so diagnostics can
    /// exercise a kernel that violates detailed balance.
    ForwardSystematic,
}

impl Scan {
    /// Site order of one deterministic sweep; `None` for random scan.
    pub fn sites(self, d: usize) -> Option<Vec<usize>> {
        match self {
            Scan::Random => None,
            Scan::ForwardSystematic => Some((0..d).collect()),
            Scan::SymmetricSystematic => Some((0..d).chain((0..d.saturating_sub(1)).rev()).collect()),
        }
    }
}

/// How `log h` is recorded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DensityMode {
    /// `h` normalized by exact enumeration (`d ≤` [`ENUMERATION_CAP`]).
    #[default]
    Exact,
    /// `h` known up to the constant `Z(x_ref, ψ)`; estimates of `Z(x, θ)` are
    /// then ratios `Z(x, θ)/Z(x_ref, ψ)`, which leaves the maximizer unchanged.
    Ratio,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerSpec<T> {
    pub reference_covariate: Vec<T>,
    pub reference_param: Vec<T>,
    pub scan: Scan,
    /// Sweeps discarded before the first recorded state; `None` means `100·d`.
    pub burn_in: Option<usize>,
    pub seed: u64,
    pub h_mode: DensityMode,
}

impl<T: Scalar> SamplerSpec<T> {
    /// Defaults: `ψ = 0`, random scan, `100·d` burn-in sweeps, exact `h`.
    pub fn new(reference_covariate: Vec<T>, param_dim: usize, seed: u64) -> Self {
        Self {
            reference_covariate,
            reference_param: vec![T::zero(); param_dim],
            scan: Scan::Random,
            burn_in: None,
            seed,
            h_mode: DensityMode::Exact,
        }
    }

    pub fn with_param(mut self, psi: Vec<T>) -> Self {
        self.reference_param = psi;
        self
    }

    pub fn with_scan(mut self, scan: Scan) -> Self {
        self.scan = scan;
        self
    }

    pub fn with_burn_in(mut self, sweeps: usize) -> Self {
        self.burn_in = Some(sweeps);
        self
    }

    pub fn with_mode(mut self, mode: DensityMode) -> Self {
        self.h_mode = mode;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn burn_in_sweeps(&self, d: usize) -> usize {
        self.burn_in.unwrap_or(100 * d)
    }
}

/// The instrumental density `h` resolved against a model.
#[derive(Clone, Debug)]
pub struct Instrumental<T> {
    x_ref: Vec<T>,
    psi: Vec<T>,
    /// `log Z(x_ref, ψ)` in exact mode, zero in ratio mode.
    log_norm: T,
    mode: DensityMode,
}

impl<T: Scalar> Instrumental<T> {
    pub fn new<M: ModelFamily<T> + ?Sized>(model: &M, spec: &SamplerSpec<T>) -> Result<Self> {
        check_x(model, &spec.reference_covariate)?;
        check_theta(model, &spec.reference_param)?;
        let log_norm = match spec.h_mode {
            DensityMode::Exact => {
                if model.response_dim() > ENUMERATION_CAP {
                    return Err(Error::Cap {
                        what: "enumeration",
                        d: model.response_dim(),
                        cap: ENUMERATION_CAP,
                    });
                }
                exact_log_z(model, &spec.reference_covariate, &spec.reference_param)?
            }
            DensityMode::Ratio => T::zero(),
        };
        Ok(Self {
            x_ref: spec.reference_covariate.clone(),
            psi: spec.reference_param.clone(),
            log_norm,
            mode: spec.h_mode,
        })
    }

    #[inline]
    pub fn log_h<M: ModelFamily<T> + ?Sized>(&self, model: &M, y: Response) -> T {
        model.log_f(&self.x_ref, y, &self.psi) - self.log_norm
    }

    pub fn log_norm(&self) -> Option<T> {
        match self.mode {
            DensityMode::Exact => Some(self.log_norm),
            DensityMode::Ratio => None,
        }
    }

    pub fn reference_covariate(&self) -> &[T] {
        &self.x_ref
    }

    pub fn reference_param(&self) -> &[T] {
        &self.psi
    }

    /// `P(y(site) = 1 | rest)` under `h`.
    #[inline]
    pub fn conditional<M: ModelFamily<T> + ?Sized>(&self, model: &M, y: Response, site: usize) -> T {
        logistic(model.log_odds(&self.x_ref, y, &self.psi, site))
    }
}

/// The recorded Markov chain.
#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloChain<T> {
    states: Vec<Response>,
    log_h: Vec<T>,
    d: usize,
    spec: SamplerSpec<T>,
    log_norm: Option<T>,
}

impl<T: Scalar> MonteCarloChain<T> {
    /// Wraps externally produced states (for tests and imported chains).
    pub fn from_parts(
        d: usize,
        states: Vec<Response>,
        log_h: Vec<T>,
        spec: SamplerSpec<T>,
        log_norm: Option<T>,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::TooFewSamples {
                what: "a chain",
                needed: 1,
                got: 0,
            });
        }
        if states.len() != log_h.len() {
            return Err(Error::Dimension {
                arg: "log_h",
                expected: states.len(),
                found: log_h.len(),
            });
        }
        if states.iter().any(|y| !y.fits(d)) {
            return Err(Error::InvalidArgument(format!("chain state outside {{0,1}}^{d}")));
        }
        Ok(Self {
            states,
            log_h,
            d,
            spec,
            log_norm,
        })
    }

    pub fn m(&self) -> usize {
        self.states.len()
    }

    pub fn response_dim(&self) -> usize {
        self.d
    }

    pub fn states(&self) -> &[Response] {
        &self.states
    }

    pub fn log_h(&self) -> &[T] {
        &self.log_h
    }

    pub fn spec(&self) -> &SamplerSpec<T> {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.spec.seed
    }

    pub fn mode(&self) -> DensityMode {
        self.spec.h_mode
    }

    /// `log Z(x_ref, ψ)` when `h` is normalized.
    pub fn log_norm(&self) -> Option<T> {
        self.log_norm
    }

    /// First `m` states of this chain.
    pub fn truncated(&self, m: usize) -> Self {
        let m = m.clamp(1, self.m());
        Self {
            states: self.states[..m].to_vec(),
            log_h: self.log_h[..m].to_vec(),
            d: self.d,
            spec: self.spec.clone(),
            log_norm: self.log_norm,
        }
    }

    /// Same states with `log h` shifted to the unnormalized (ratio) convention.
    pub fn to_ratio_mode(&self) -> Self {
        let shift = self.log_norm.unwrap_or(T::zero());
        Self {
            states: self.states.clone(),
            log_h: self.log_h.iter().map(|&v| v + shift).collect(),
            d: self.d,
            spec: SamplerSpec {
                h_mode: DensityMode::Ratio,
                ..self.spec.clone()
            },
            log_norm: None,
        }
    }

    /// CSV export with columns `k,y_1..y_d,log_h` (`k` is 1-based).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["k".to_string()];
        header.extend((1..=self.d).map(|s| format!("y_{s}")));
        header.push("log_h".into());
        w.write_record(&header)?;
        for (k, (y, lh)) in self.states.iter().zip(&self.log_h).enumerate() {
            let mut rec = vec![(k + 1).to_string()];
            rec.extend((0..self.d).map(|s| if y.get(s) { "1".into() } else { "0".into() }));
            rec.push(format!("{}", lh.as_f64()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Applies one sweep of single-site Gibbs updates targeting `h`.
pub fn sweep<T: Scalar, M: ModelFamily<T> + ?Sized, R: Rng>(
    model: &M,
    h: &Instrumental<T>,
    scan: Scan,
    mut y: Response,
    rng: &mut R,
) -> Response {
    let d = model.response_dim();
    let update = |y: Response, site: usize, rng: &mut R| {
        let p1 = h.conditional(model, y, site);
        let u = T::of(rng.random::<f64>());
        y.with(site, u < p1)
    };
    match scan {
        Scan::Random => {
            for _ in 0..d {
                let site = rng.random_range(0..d);
                y = update(y, site, rng);
            }
        }
        Scan::ForwardSystematic => {
            for site in 0..d {
                y = update(y, site, rng);
            }
        }
        Scan::SymmetricSystematic => {
            for site in (0..d).chain((0..d.saturating_sub(1)).rev()) {
                y = update(y, site, rng);
            }
        }
    }
    y
}

/// Runs the sampler for `m` recorded sweeps after burn-in.
pub fn run_chain<T: Scalar, M: ModelFamily<T> + ?Sized>(
    model: &M,
    spec: &SamplerSpec<T>,
    m: usize,
) -> Result<MonteCarloChain<T>> {
    if m == 0 {
        return Err(Error::TooFewSamples {
            what: "a chain",
            needed: 1,
            got: 0,
        });
    }
    let h = Instrumental::new(model, spec)?;
    let d = model.response_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut y = Response::ZERO;
    for _ in 0..spec.burn_in_sweeps(d) {
        y = sweep(model, &h, spec.scan, y, &mut rng);
    }
    let mut states = Vec::with_capacity(m);
    let mut log_h = Vec::with_capacity(m);
    for _ in 0..m {
        y = sweep(model, &h, spec.scan, y, &mut rng);
        states.push(y);
        log_h.push(h.log_h(model, y));
    }
    Ok(MonteCarloChain {
        states,
        log_h,
        d,
        spec: spec.clone(),
        log_norm: h.log_norm(),
    })
}

/// `log h(y)`: normalized in exact mode, `ψ′T(x_ref, y)` in ratio mode.
pub fn eval_log_h<T: Scalar, M: ModelFamily<T> + ?Sized>(model: &M, spec: &SamplerSpec<T>, y: Response) -> Result<T> {
    check_xy(model, &spec.reference_covariate, y)?;
    let h = Instrumental::new(model, spec)?;
    Ok(h.log_h(model, y))
}
