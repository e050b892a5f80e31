//! Monte Carlo designs and the replicate runner.
//!
//! Every replicate draws from its own ChaCha stream (`seed`, stream = replicate
//! index), so serial and parallel runs produce identical reports.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Gamma, Normal};
use statrs::function::gamma::gamma_lr;

use crate::baselines::{fit_parametric, parametric_effects, Family};
use crate::effects::{EffectEstimate, EffectKind};
use crate::error::{Result, SemfxError};
use crate::fit::{fit_mle, Dataset, FitConfig};
use crate::inference::{coefficient_estimate, marginal_estimate, quantile_estimate, sigma_blocks, Z_975};
use crate::model::SupportDescriptor;
use crate::quadrature::{GaussRule, QuadratureGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum CovariateLaw {
    /// Mean zero, `cov_kl = rho^{|k−l|}`.
    MvNormal { dim: usize, rho: f64 },
    /// Independent uniforms on `[lo, hi]`.
    Uniform { dim: usize, lo: f64, hi: f64 },
}

impl CovariateLaw {
    pub fn dim(&self) -> usize {
        match self {
            CovariateLaw::MvNormal { dim, .. } | CovariateLaw::Uniform { dim, .. } => *dim,
        }
    }

    fn covariance(&self) -> DMatrix<f64> {
        match *self {
            CovariateLaw::MvNormal { dim, rho } => {
                DMatrix::from_fn(dim, dim, |k, l| rho.powi((k as i32 - l as i32).abs()))
            }
            CovariateLaw::Uniform { dim, lo, hi } => DMatrix::identity(dim, dim) * ((hi - lo).powi(2) / 12.0),
        }
    }
}

/// Response law given the generating index `θ = βᵀx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ResponseLaw {
    /// Normal with mean `θ` and sd `sigma`, truncated to `[a, b]`.
    TruncNormal { sigma: f64, a: f64, b: f64 },
    Normal { sigma: f64 },
    /// Gamma with shape `shape` and mean `1/θ`, truncated to `[0, b]`.
    TruncGamma { shape: f64, b: f64 },
    Gamma { shape: f64 },
    /// Success probability `1/(1 + e^{−θ})`.
    Bernoulli,
    /// Rate `e^θ`.
    Poisson,
    /// Mass `C(y+r−1, r−1) p^y (1−p)^r` with `p = e^θ`.
    NegBinomial { r: f64 },
}

impl ResponseLaw {
    pub fn is_discrete(&self) -> bool {
        matches!(self, ResponseLaw::Bernoulli | ResponseLaw::Poisson | ResponseLaw::NegBinomial { .. })
    }

    /// Factor converting the generating coefficients to the tilt scale.
    fn tilt_factor(&self) -> f64 {
        match *self {
            ResponseLaw::TruncNormal { sigma, .. } | ResponseLaw::Normal { sigma } => 1.0 / (sigma * sigma),
            ResponseLaw::TruncGamma { shape, .. } | ResponseLaw::Gamma { shape } => -shape,
            _ => 1.0,
        }
    }

    /// Parametric baseline family fitted alongside the semiparametric model.
    pub fn baseline(&self) -> Family {
        match self {
            ResponseLaw::TruncNormal { .. } | ResponseLaw::Normal { .. } => Family::Normal,
            ResponseLaw::TruncGamma { .. } | ResponseLaw::Gamma { .. } => Family::Gamma,
            ResponseLaw::Bernoulli => Family::Bernoulli,
            ResponseLaw::Poisson | ResponseLaw::NegBinomial { .. } => Family::Poisson,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            ResponseLaw::TruncNormal { sigma, a, b } => sigma > 0.0 && a < b,
            ResponseLaw::Normal { sigma } => sigma > 0.0,
            ResponseLaw::TruncGamma { shape, b } => shape > 0.0 && b > 0.0,
            ResponseLaw::Gamma { shape } => shape > 0.0,
            ResponseLaw::NegBinomial { r } => r > 0.0,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(SemfxError::Config(format!("invalid response law {self:?}")))
        }
    }

    /// Draw one response by inversion of the conditional CDF.
    fn sample(&self, theta: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
        let u: f64 = rng.random();
        Ok(match *self {
            ResponseLaw::TruncNormal { sigma, a, b } => trunc_normal_quantile(theta, sigma, a, b, u),
            ResponseLaw::Normal { sigma } => theta + sigma * rng.sample::<f64, _>(StandardNormal),
            ResponseLaw::TruncGamma { shape, b } => {
                let rate = shape * theta;
                gamma_quantile(shape, u * gamma_lr(shape, rate * b)).min(rate * b) / rate
            }
            ResponseLaw::Gamma { shape } => gamma_quantile(shape, u) / (shape * theta),
            ResponseLaw::Bernoulli => (u < logistic(theta)) as u8 as f64,
            ResponseLaw::Poisson => {
                let rate = theta.exp();
                discrete_inverse(u, (-rate).exp(), |y| rate / (y + 1.0))
            }
            ResponseLaw::NegBinomial { r } => {
                let p = theta.exp();
                if !(p < 1.0) {
                    return Err(SemfxError::Config(format!("negative binomial needs exp(θ) < 1, got θ = {theta}")));
                }
                discrete_inverse(u, (1.0 - p).powf(r), |y| p * (y + r) / (y + 1.0))
            }
        })
    }

    /// `(var(Y|θ), dQ_τ/dν)` with `ν` the tilt index; `None` for the quantile
    /// part on discrete laws.
    fn conditional(&self, theta: f64, taus: &[f64]) -> (f64, Vec<f64>) {
        match *self {
            ResponseLaw::TruncNormal { sigma, a, b } => {
                let s2 = sigma * sigma;
                let var = trunc_normal_variance(theta, sigma, a, b);
                (var, taus.iter().map(|&t| s2 * trunc_normal_qprime(theta, sigma, a, b, t)).collect())
            }
            ResponseLaw::Normal { sigma } => {
                let s2 = sigma * sigma;
                (s2, taus.iter().map(|_| s2).collect())
            }
            ResponseLaw::TruncGamma { shape, b } => {
                let rate = shape * theta;
                let (m1, m2) = trunc_gamma_moments(shape, rate, b);
                let var = m2 - m1 * m1;
                // ν = −rate, so dq/dν = −dq/d(rate).
                let qp = taus
                    .iter()
                    .map(|&t| {
                        let top = gamma_lr(shape, rate * b);
                        let q = gamma_quantile(shape, t * top) / rate;
                        let g = Gamma::new(shape, 1.0).expect("valid shape");
                        let dq_drate = (t * b * g.pdf(rate * b) / g.pdf(rate * q) - q) / rate;
                        -dq_drate
                    })
                    .collect();
                (var, qp)
            }
            ResponseLaw::Gamma { shape } => {
                let rate = shape * theta;
                (shape / (rate * rate), taus.iter().map(|&t| gamma_quantile(shape, t) / (rate * rate)).collect())
            }
            ResponseLaw::Bernoulli => {
                let p = logistic(theta);
                (p * (1.0 - p), vec![])
            }
            ResponseLaw::Poisson => (theta.exp(), vec![]),
            ResponseLaw::NegBinomial { r } => {
                let p = theta.exp();
                (r * p / (1.0 - p).powi(2), vec![])
            }
        }
    }
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Standard normal law with `libm`'s erfc for accurate tails.
struct StdNormal;

impl StdNormal {
    fn cdf(&self, x: f64) -> f64 {
        0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
    }

    fn pdf(&self, x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    /// Inverse CDF: statrs' value polished by Newton on `log Φ`, which stays
    /// well conditioned deep in the tail.
    fn inverse_cdf(&self, p: f64) -> f64 {
        if p > 0.5 {
            return -self.lower_inverse(1.0 - p);
        }
        self.lower_inverse(p)
    }

    fn lower_inverse(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let target = p.ln();
        let mut z = Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p);
        if !z.is_finite() {
            z = -(-2.0 * target).sqrt();
        }
        for _ in 0..50 {
            let c = self.cdf(z);
            let step = (c.ln() - target) * c / self.pdf(z);
            z -= step;
            if step.abs() <= 1e-15 * (1.0 + z.abs()) {
                break;
            }
        }
        z
    }
}

fn std_normal() -> StdNormal {
    StdNormal
}

/// Smallest `y` with `F(y) ≥ u`, walking the mass recursion `p(y+1) = p(y)·ratio(y)`.
fn discrete_inverse(u: f64, p0: f64, ratio: impl Fn(f64) -> f64) -> f64 {
    let mut y = 0.0;
    let mut pm = p0;
    let mut cdf = p0;
    while cdf < u && y < 1e6 {
        pm *= ratio(y);
        y += 1.0;
        cdf += pm;
        if pm == 0.0 && cdf < u {
            break;
        }
    }
    y
}

/// Quantile of the standard gamma law (rate 1), Newton-polished to full precision.
pub fn gamma_quantile(shape: f64, p: f64) -> f64 {
    let g = Gamma::new(shape, 1.0).expect("shape must be positive");
    if p <= 0.0 {
        return 0.0;
    }
    let mut x = g.inverse_cdf(p.min(1.0 - 1e-16));
    for _ in 0..50 {
        let f = g.pdf(x);
        if !(f > 0.0) {
            break;
        }
        let step = (gamma_lr(shape, x) - p) / f;
        let next = (x - step).max(0.5 * x);
        if (next - x).abs() <= 1e-15 * x {
            x = next;
            break;
        }
        x = next;
    }
    x
}

/// `(E Y, E Y²)` of a gamma law with the given shape and rate truncated to `[0, b]`.
fn trunc_gamma_moments(shape: f64, rate: f64, b: f64) -> (f64, f64) {
    let z = gamma_lr(shape, rate * b);
    let m1 = shape / rate * gamma_lr(shape + 1.0, rate * b) / z;
    let m2 = shape * (shape + 1.0) / (rate * rate) * gamma_lr(shape + 2.0, rate * b) / z;
    (m1, m2)
}

/// Reflect so that the lower standardized bound is at most zero, which keeps
/// the normalizing difference of normal CDFs free of cancellation.
fn reflect(theta: f64, a: f64, b: f64, tau: f64) -> (f64, f64, f64, f64, f64) {
    if theta < 0.5 * (a + b) {
        (-theta, -b, -a, 1.0 - tau, -1.0)
    } else {
        (theta, a, b, tau, 1.0)
    }
}

pub fn trunc_normal_quantile(theta: f64, sigma: f64, a: f64, b: f64, tau: f64) -> f64 {
    let nd = std_normal();
    let (t, a, b, tau, sign) = reflect(theta, a, b, tau);
    let (lo, hi) = ((a - t) / sigma, (b - t) / sigma);
    let (fa, fb) = (nd.cdf(lo), nd.cdf(hi));
    let z = nd.inverse_cdf(fa + tau * (fb - fa)).clamp(lo, hi);
    sign * (t + sigma * z)
}

/// `dQ_τ/dθ` for the truncated normal, from implicit differentiation of the CDF equation.
pub fn trunc_normal_qprime(theta: f64, sigma: f64, a: f64, b: f64, tau: f64) -> f64 {
    let nd = std_normal();
    let (t, a2, b2, tau2, _) = reflect(theta, a, b, tau);
    let (lo, hi) = ((a2 - t) / sigma, (b2 - t) / sigma);
    let q = (trunc_normal_quantile(t, sigma, a2, b2, tau2) - t) / sigma;
    1.0 - ((1.0 - tau2) * nd.pdf(lo) + tau2 * nd.pdf(hi)) / nd.pdf(q)
}

pub fn trunc_normal_variance(theta: f64, sigma: f64, a: f64, b: f64) -> f64 {
    let nd = std_normal();
    let (t, a, b, _, _) = reflect(theta, a, b, 0.5);
    let (lo, hi) = ((a - t) / sigma, (b - t) / sigma);
    let z = nd.cdf(hi) - nd.cdf(lo);
    let (pa, pb) = (nd.pdf(lo), nd.pdf(hi));
    sigma * sigma * (1.0 + (lo * pa - hi * pb) / z - ((pa - pb) / z).powi(2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub covariates: CovariateLaw,
    pub response: ResponseLaw,
    /// Generating coefficients as written in the design (`θ = βᵀx`).
    pub beta: Vec<f64>,
    pub n: usize,
    pub replicates: usize,
    pub taus: Vec<f64>,
    pub seed: u64,
}

pub const PRESETS: [&str; 7] = ["trunc-normal", "normal", "trunc-gamma", "gamma", "bernoulli", "poisson", "negbinomial"];

impl Scenario {
    /// One of the named designs with `n = 1000`, 1000 replicates.
    pub fn preset(name: &str) -> Option<Scenario> {
        let normal_x = CovariateLaw::MvNormal { dim: 3, rho: 0.1 };
        let unif_x = CovariateLaw::Uniform { dim: 2, lo: 0.5, hi: 1.0 };
        let taus = crate::effects::DEFAULT_TAUS.to_vec();
        let (covariates, response, beta, taus) = match name {
            "trunc-normal" => (normal_x, ResponseLaw::TruncNormal { sigma: 1.0, a: -5.0, b: 5.0 }, vec![1.0, 2.0, 3.0], taus),
            "normal" => (normal_x, ResponseLaw::Normal { sigma: 1.0 }, vec![1.0, 2.0, 3.0], taus),
            "trunc-gamma" => (unif_x, ResponseLaw::TruncGamma { shape: 5.0, b: 2.0 }, vec![0.5, 1.0], taus),
            "gamma" => (unif_x, ResponseLaw::Gamma { shape: 5.0 }, vec![0.5, 1.0], taus),
            "bernoulli" => (normal_x, ResponseLaw::Bernoulli, vec![-0.5, 0.5, 1.0], vec![]),
            "poisson" => (unif_x, ResponseLaw::Poisson, vec![0.0, 1.0], vec![]),
            "negbinomial" => (unif_x, ResponseLaw::NegBinomial { r: 2.0 }, vec![0.0, -1.0], vec![]),
            _ => return None,
        };
        Some(Scenario { name: name.into(), covariates, response, beta, n: 1000, replicates: 1000, taus, seed: 20240501 })
    }

    pub fn validate(&self) -> Result<()> {
        self.response.validate()?;
        if self.beta.len() != self.covariates.dim() || self.beta.is_empty() {
            return Err(SemfxError::Config("beta length must equal the covariate dimension".into()));
        }
        if self.n < 2 || self.replicates == 0 {
            return Err(SemfxError::Config("need n >= 2 and at least one replicate".into()));
        }
        if self.taus.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return Err(SemfxError::Config("quantile levels must lie in (0, 1)".into()));
        }
        if self.response.is_discrete() && !self.taus.is_empty() {
            return Err(SemfxError::Config("quantile effects need a continuous response".into()));
        }
        if let CovariateLaw::MvNormal { rho, .. } = self.covariates {
            if rho.abs() >= 1.0 {
                return Err(SemfxError::Config("|rho| must be below 1".into()));
            }
        }
        if matches!(self.response, ResponseLaw::TruncGamma { .. } | ResponseLaw::Gamma { .. })
            && !matches!(self.covariates, CovariateLaw::Uniform { lo, .. } if lo >= 0.0)
            || self.beta.iter().any(|b| *b < 0.0)
                && matches!(self.response, ResponseLaw::TruncGamma { .. } | ResponseLaw::Gamma { .. })
        {
            return Err(SemfxError::Config("gamma designs need non-negative covariates and coefficients".into()));
        }
        Ok(())
    }

    /// True coefficients on the tilt scale.
    pub fn tilt_beta(&self) -> Vec<f64> {
        let f = self.response.tilt_factor();
        self.beta.iter().map(|b| b * f).collect()
    }

    pub fn is_discrete(&self) -> bool {
        self.response.is_discrete()
    }

    /// Support handed to the semiparametric fit: true truncation bounds, a
    /// 5%-padded sample range for untruncated continuous laws, or the levels
    /// `0..=max(y)` for counts.
    pub fn support_for(&self, y: &[f64]) -> SupportDescriptor {
        match self.response {
            ResponseLaw::TruncNormal { a, b, .. } => SupportDescriptor::continuous(a, b),
            ResponseLaw::TruncGamma { b, .. } => SupportDescriptor::continuous(0.0, b),
            ResponseLaw::Normal { .. } | ResponseLaw::Gamma { .. } => padded_support(y),
            _ => {
                let top = y.iter().cloned().fold(1.0, f64::max);
                SupportDescriptor::discrete_range(top as usize)
            }
        }
    }
}

/// Sample range padded by 5% on each side.
pub fn padded_support(y: &[f64]) -> SupportDescriptor {
    let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.05 * (hi - lo).max(f64::EPSILON * hi.abs().max(1.0));
    SupportDescriptor::continuous(lo - pad, hi + pad)
}

fn replicate_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Deterministic dataset for `(scenario.seed, index)`.
pub fn generate(scenario: &Scenario, index: usize) -> Result<Dataset> {
    scenario.validate()?;
    let mut rng = replicate_rng(scenario.seed, index);
    let p = scenario.covariates.dim();
    let chol = match scenario.covariates {
        CovariateLaw::MvNormal { .. } => Some(
            scenario
                .covariates
                .covariance()
                .cholesky()
                .ok_or_else(|| SemfxError::Config("covariate covariance is not positive definite".into()))?
                .l(),
        ),
        _ => None,
    };
    let mut x = DMatrix::zeros(scenario.n, p);
    let mut y = Vec::with_capacity(scenario.n);
    let mut z = vec![0.0; p];
    for i in 0..scenario.n {
        match (&scenario.covariates, &chol) {
            (CovariateLaw::MvNormal { .. }, Some(l)) => {
                for v in z.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                for k in 0..p {
                    x[(i, k)] = (0..=k).map(|j| l[(k, j)] * z[j]).sum();
                }
            }
            (CovariateLaw::Uniform { lo, hi, .. }, _) => {
                for k in 0..p {
                    x[(i, k)] = rng.random_range(*lo..*hi);
                }
            }
            _ => unreachable!("covariance factor exists for normal designs"),
        }
        let theta: f64 = (0..p).map(|k| x[(i, k)] * scenario.beta[k]).sum();
        y.push(scenario.response.sample(theta, &mut rng)?);
    }
    let support = scenario.support_for(&y);
    Dataset::new(x, y, support)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueEffects {
    pub beta: Vec<f64>,
    pub xi: Vec<f64>,
    /// `(τ, η_τ)` pairs; empty for discrete laws.
    pub eta: Vec<(f64, Vec<f64>)>,
}

impl TrueEffects {
    pub fn truth(&self, kind: &EffectKind) -> Option<&[f64]> {
        match kind {
            EffectKind::Coefficient => Some(&self.beta),
            EffectKind::Marginal => Some(&self.xi),
            EffectKind::Quantile { tau } => self.eta.iter().find(|(t, _)| t == tau).map(|(_, v)| v.as_slice()),
        }
    }
}

/// `ξ` and `η_τ` under the true law, by deterministic quadrature over the
/// covariate distribution and closed-form conditional moments and quantiles.
pub fn true_effects(scenario: &Scenario) -> Result<TrueEffects> {
    scenario.validate()?;
    let taus = &scenario.taus;
    let mut acc_var = 0.0;
    let mut acc_q = vec![0.0; taus.len()];
    let mut add = |theta: f64, w: f64| {
        let (v, q) = scenario.response.conditional(theta, taus);
        acc_var += w * v;
        for (a, b) in acc_q.iter_mut().zip(q) {
            *a += w * b;
        }
    };
    match scenario.covariates {
        CovariateLaw::MvNormal { .. } => {
            // θ = βᵀX is normal with variance βᵀΣβ.
            let cov = scenario.covariates.covariance();
            let b = nalgebra::DVector::from_column_slice(&scenario.beta);
            let sd = (b.transpose() * cov * &b)[(0, 0)].sqrt();
            let nd = std_normal();
            if sd == 0.0 {
                add(0.0, 1.0);
            } else {
                let edges: Vec<f64> = (0..=40).map(|k| sd * (-10.0 + 0.5 * k as f64)).collect();
                let grid = QuadratureGrid::composite(&edges, 2400)?;
                for (&t, &w) in grid.nodes().iter().zip(grid.weights()) {
                    add(t, w * nd.pdf(t / sd) / sd);
                }
            }
        }
        CovariateLaw::Uniform { dim, lo, hi } => {
            let rule = GaussRule::new(48)?;
            let nodes: Vec<(f64, f64)> = rule.mapped(lo, hi).map(|(x, w)| (x, w / (hi - lo))).collect();
            let mut idx = vec![0usize; dim];
            loop {
                let theta: f64 = (0..dim).map(|k| nodes[idx[k]].0 * scenario.beta[k]).sum();
                let w: f64 = idx.iter().map(|&j| nodes[j].1).product();
                add(theta, w);
                let mut k = 0;
                while k < dim {
                    idx[k] += 1;
                    if idx[k] < nodes.len() {
                        break;
                    }
                    idx[k] = 0;
                    k += 1;
                }
                if k == dim {
                    break;
                }
            }
        }
    }
    let beta = scenario.tilt_beta();
    let xi = beta.iter().map(|b| b * acc_var).collect();
    let eta = taus.iter().zip(&acc_q).map(|(&t, &q)| (t, beta.iter().map(|b| b * q).collect())).collect();
    Ok(TrueEffects { beta, xi, eta })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Semiparametric spline approximate maximum likelihood.
    Amle,
    /// Parametric baseline.
    Mle,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Amle => "aMLE",
            Method::Mle => "MLE",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub methods: Vec<Method>,
    /// Worker threads; `None` uses rayon's default.
    pub workers: Option<usize>,
    /// Keep per-replicate estimates in the report.
    pub keep_records: bool,
    pub fit: FitConfig,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { methods: vec![Method::Amle, Method::Mle], workers: None, keep_records: false, fit: FitConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: usize,
    pub method: Method,
    pub estimates: Vec<EffectEstimate>,
}

/// Summary columns for one estimand coordinate under one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub estimand: String,
    /// 1-based covariate index.
    pub coordinate: usize,
    pub truth: f64,
    /// Mean over replicates of `|estimate − truth|`.
    pub mean_abs_bias: f64,
    /// Sample standard deviation of the estimates; `None` with one replicate.
    pub sd_sim: Option<f64>,
    pub mean_se: f64,
    pub coverage: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failures {
    pub method: Method,
    pub count: usize,
    pub first_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub scenario: Scenario,
    pub truth: TrueEffects,
    pub rows: Vec<ReportRow>,
    pub failures: Vec<Failures>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<ReplicateRecord>,
}

impl SimulationReport {
    pub fn row(&self, method: Method, estimand: &str, coordinate: usize) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.estimand == estimand && r.coordinate == coordinate)
    }

    /// Plain-text table with the `|bias|  σ_sim  σ̂_est  C.I.` column layout.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "scenario {}  n = {}  replicates = {}\n{:<6} {:<12} {:>9} {:>8} {:>8} {:>8} {:>6}\n",
            self.scenario.name, self.scenario.n, self.scenario.replicates, "method", "estimand", "truth", "|bias|", "sd_sim", "se_est", "C.I."
        );
        for r in &self.rows {
            let sd = r.sd_sim.map_or("NA".to_string(), |v| format!("{v:.3}"));
            out.push_str(&format!(
                "{:<6} {:<12} {:>9.4} {:>8.3} {:>8} {:>8.3} {:>6.3}\n",
                r.method.label(),
                format!("{}{}", r.estimand, r.coordinate),
                r.truth,
                r.mean_abs_bias,
                sd,
                r.mean_se,
                r.coverage
            ));
        }
        for f in self.failures.iter().filter(|f| f.count > 0) {
            out.push_str(&format!("{} failed replicates: {}\n", f.method.label(), f.count));
        }
        out
    }
}

fn amle_replicate(data: &Dataset, taus: &[f64], cfg: &FitConfig) -> Result<Vec<EffectEstimate>> {
    let fit = fit_mle(data, cfg)?;
    let blocks = sigma_blocks(&fit, data)?;
    let mut out = vec![coefficient_estimate(&fit, data, &blocks)?, marginal_estimate(&fit, data, &blocks)?.1];
    for &tau in taus {
        out.push(quantile_estimate(&fit, data, &blocks, tau)?.1);
    }
    Ok(out)
}

fn mle_replicate(data: &Dataset, family: Family, taus: &[f64]) -> Result<Vec<EffectEstimate>> {
    let pfit = fit_parametric(data, family)?;
    parametric_effects(&pfit, data, taus)
}

type Outcome = Vec<(Method, std::result::Result<Vec<EffectEstimate>, String>)>;

fn run_one(scenario: &Scenario, index: usize, opts: &RunOptions) -> Outcome {
    let data = match generate(scenario, index) {
        Ok(d) => d,
        Err(e) => return opts.methods.iter().map(|m| (*m, Err(e.to_string()))).collect(),
    };
    opts.methods
        .iter()
        .map(|&m| {
            let r = match m {
                Method::Amle => amle_replicate(&data, &scenario.taus, &opts.fit),
                Method::Mle => mle_replicate(&data, scenario.response.baseline(), &scenario.taus),
            };
            (m, r.map_err(|e| e.to_string()))
        })
        .collect()
}

/// Generate, fit and summarize every replicate.
pub fn run_scenario(scenario: &Scenario, opts: &RunOptions) -> Result<SimulationReport> {
    scenario.validate()?;
    let truth = true_effects(scenario)?;
    let work = || -> Vec<Outcome> {
        (0..scenario.replicates).into_par_iter().map(|i| run_one(scenario, i, opts)).collect()
    };
    let outcomes = match opts.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| SemfxError::Config(e.to_string()))?
            .install(work),
        None => work(),
    };

    let total = scenario.replicates;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut records = Vec::new();
    for (mi, &method) in opts.methods.iter().enumerate() {
        let mut ok: Vec<(usize, &Vec<EffectEstimate>)> = Vec::new();
        let mut failed = 0;
        let mut first_error = None;
        for (i, o) in outcomes.iter().enumerate() {
            match &o[mi].1 {
                Ok(est) => ok.push((i, est)),
                Err(e) => {
                    failed += 1;
                    first_error.get_or_insert_with(|| e.clone());
                }
            }
        }
        if failed as f64 > 0.05 * total as f64 {
            return Err(SemfxError::TooManyFailures { failed, total });
        }
        failures.push(Failures { method, count: failed, first_error });
        if let Some((_, first)) = ok.first() {
            for (slot, est) in first.iter().enumerate() {
                let Some(truth_v) = truth.truth(&est.kind) else { continue };
                for k in 0..est.point.len() {
                    let points: Vec<f64> = ok.iter().map(|(_, e)| e[slot].point[k]).collect();
                    let ses: Vec<f64> = ok.iter().map(|(_, e)| e[slot].se[k]).collect();
                    rows.push(summarize(method, est.kind.label(), k, truth_v[k], &points, &ses));
                }
            }
        }
        if opts.keep_records {
            records.extend(ok.iter().map(|(i, e)| ReplicateRecord { index: *i, method, estimates: (*e).clone() }));
        }
    }
    records.sort_by_key(|r| r.index);
    Ok(SimulationReport { scenario: scenario.clone(), truth, rows, failures, records })
}

fn summarize(method: Method, estimand: String, k: usize, truth: f64, points: &[f64], ses: &[f64]) -> ReportRow {
    let r = points.len() as f64;
    let mean = points.iter().sum::<f64>() / r;
    let sd_sim = (points.len() > 1)
        .then(|| (points.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt());
    let covered = points.iter().zip(ses).filter(|(p, s)| (*p - truth).abs() <= Z_975 * *s).count();
    ReportRow {
        method,
        estimand,
        coordinate: k + 1,
        truth,
        mean_abs_bias: points.iter().map(|p| (p - truth).abs()).sum::<f64>() / r,
        sd_sim,
        mean_se: ses.iter().sum::<f64>() / r,
        coverage: covered as f64 / r,
        replicates: points.len(),
    }
}
