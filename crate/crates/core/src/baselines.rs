//! Fully parametric GLM baselines.
//!
//! Coefficients are reported on the tilt scale so they compare directly with
//! the semiparametric fit:
//!
//! | family    | linear predictor          | reported `β`  |
//! |-----------|---------------------------|---------------|
//! | normal    | mean `a + bᵀx`, σ profiled | `b/σ̂²`       |
//! | gamma     | mean `1/bᵀx`, shape `α`    | `−α̂ b`       |
//! | bernoulli | logit `a + bᵀx`            | `b`          |
//! | poisson   | log rate `bᵀx`             | `b`          |
//!
//! Effect standard errors use the delta method on the full parameter vector
//! plus the sample spread of the per-observation effect over covariates.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::effects::{EffectEstimate, EffectKind};
use crate::error::{Result, SemfxError};
use crate::fit::Dataset;
use crate::inference::estimate;
use crate::linalg::{solve_spd_with_ridge, spd_inverse, symmetrize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Normal,
    Gamma,
    Bernoulli,
    Poisson,
}

impl Family {
    pub fn parse(s: &str) -> Option<Family> {
        match s {
            "normal" => Some(Family::Normal),
            "gamma" => Some(Family::Gamma),
            "bernoulli" | "logistic" => Some(Family::Bernoulli),
            "poisson" => Some(Family::Poisson),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::Normal => "normal",
            Family::Gamma => "gamma",
            Family::Bernoulli => "bernoulli",
            Family::Poisson => "poisson",
        }
    }

    fn has_intercept(&self) -> bool {
        matches!(self, Family::Normal | Family::Bernoulli)
    }
}

#[derive(Debug, Clone)]
pub struct ParametricFit {
    pub family: Family,
    /// Optimization parameters: `[intercept?, b, log-dispersion?]`.
    pub theta: Vec<f64>,
    /// Coefficients on the tilt scale.
    pub beta: Vec<f64>,
    /// `σ` (normal) or `α` (gamma).
    pub dispersion: Option<f64>,
    pub loglik: f64,
    /// Inverse observed information for `theta`.
    pub cov_theta: DMatrix<f64>,
    pub iterations: usize,
    pub n: usize,
    p: usize,
}

impl ParametricFit {
    /// Free parameter count for information criteria.
    pub fn df(&self) -> usize {
        self.theta.len()
    }

    /// Score at the fitted parameters.
    pub fn score(&self, data: &Dataset) -> DVector<f64> {
        Likelihood::new(self.family, data).score(&self.theta)
    }
}

struct Likelihood<'a> {
    family: Family,
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    p: usize,
}

impl<'a> Likelihood<'a> {
    fn new(family: Family, data: &'a Dataset) -> Self {
        Likelihood { family, x: data.x(), y: data.y(), p: data.p() }
    }

    fn dim(&self) -> usize {
        self.p + self.family.has_intercept() as usize + matches!(self.family, Family::Normal | Family::Gamma) as usize
    }

    /// Linear predictor for observation `i`.
    fn eta(&self, theta: &[f64], i: usize) -> f64 {
        let off = self.family.has_intercept() as usize;
        let mut v = if off == 1 { theta[0] } else { 0.0 };
        for j in 0..self.p {
            v += theta[off + j] * self.x[(i, j)];
        }
        v
    }

    /// Design row including the intercept column when present.
    fn design(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        let icpt = self.family.has_intercept().then_some(1.0);
        icpt.into_iter().chain((0..self.p).map(move |j| self.x[(i, j)]))
    }

    fn value(&self, theta: &[f64]) -> f64 {
        let n = self.y.len();
        let mut total = 0.0;
        for i in 0..n {
            let e = self.eta(theta, i);
            let y = self.y[i];
            total += match self.family {
                Family::Normal => {
                    let s2 = theta[theta.len() - 1].exp();
                    -0.5 * ((2.0 * std::f64::consts::PI * s2).ln() + (y - e).powi(2) / s2)
                }
                Family::Gamma => {
                    if e <= 0.0 {
                        return f64::NEG_INFINITY;
                    }
                    let a = theta[theta.len() - 1].exp();
                    a * (a * e).ln() + (a - 1.0) * y.ln() - a * e * y - ln_gamma(a)
                }
                Family::Bernoulli => y * e - softplus(e),
                Family::Poisson => y * e - e.exp() - ln_gamma(y + 1.0),
            };
        }
        total
    }

    fn score(&self, theta: &[f64]) -> DVector<f64> {
        let d = self.dim();
        let mut g = DVector::zeros(d);
        for i in 0..self.y.len() {
            let e = self.eta(theta, i);
            let y = self.y[i];
            let (w, extra) = match self.family {
                Family::Normal => {
                    let s2 = theta[d - 1].exp();
                    ((y - e) / s2, Some(-0.5 + (y - e).powi(2) / (2.0 * s2)))
                }
                Family::Gamma => {
                    let a = theta[d - 1].exp();
                    let da = (a * e).ln() + 1.0 + y.ln() - e * y - digamma(a);
                    (a * (1.0 / e - y), Some(a * da))
                }
                Family::Bernoulli => (y - logistic(e), None),
                Family::Poisson => (y - e.exp(), None),
            };
            for (k, z) in self.design(i).enumerate() {
                g[k] += w * z;
            }
            if let Some(v) = extra {
                g[d - 1] += v;
            }
        }
        g
    }

    fn hessian(&self, theta: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let k = self.p + self.family.has_intercept() as usize;
        let mut h = DMatrix::zeros(d, d);
        for i in 0..self.y.len() {
            let e = self.eta(theta, i);
            let y = self.y[i];
            // (weight on z zᵀ, weight on z for the dispersion cross term, dispersion diagonal)
            let (w, cross, disp) = match self.family {
                Family::Normal => {
                    let s2 = theta[d - 1].exp();
                    let r = y - e;
                    (-1.0 / s2, -r / s2, -r * r / (2.0 * s2))
                }
                Family::Gamma => {
                    let a = theta[d - 1].exp();
                    let da = (a * e).ln() + 1.0 + y.ln() - e * y - digamma(a);
                    (-a / (e * e), a * (1.0 / e - y), a * da + a * a * (1.0 / a - trigamma(a)))
                }
                Family::Bernoulli => {
                    let pr = logistic(e);
                    (-pr * (1.0 - pr), 0.0, 0.0)
                }
                Family::Poisson => (-e.exp(), 0.0, 0.0),
            };
            let z: Vec<f64> = self.design(i).collect();
            for a in 0..k {
                for b in 0..k {
                    h[(a, b)] += w * z[a] * z[b];
                }
                if d > k {
                    h[(a, d - 1)] += cross * z[a];
                    h[(d - 1, a)] += cross * z[a];
                }
            }
            if d > k {
                h[(d - 1, d - 1)] += disp;
            }
        }
        h
    }
}

fn trigamma(a: f64) -> f64 {
    let h = 1e-4 * a.max(1e-3);
    (digamma(a + h) - digamma(a - h)) / (2.0 * h)
}

fn logistic(e: f64) -> f64 {
    if e >= 0.0 {
        1.0 / (1.0 + (-e).exp())
    } else {
        let z = e.exp();
        z / (1.0 + z)
    }
}

fn softplus(e: f64) -> f64 {
    if e > 0.0 {
        e + (-e).exp().ln_1p()
    } else {
        e.exp().ln_1p()
    }
}

fn check_response(family: Family, y: &[f64]) -> Result<()> {
    let bad = |what: &str| Err(SemfxError::InvalidInput(format!("{} family needs {what}", family.name())));
    match family {
        Family::Normal => Ok(()),
        Family::Gamma if y.iter().any(|v| *v <= 0.0) => bad("strictly positive responses"),
        Family::Bernoulli if y.iter().any(|v| *v != 0.0 && *v != 1.0) => bad("0/1 responses"),
        Family::Poisson if y.iter().any(|v| *v < 0.0 || v.fract() != 0.0) => bad("non-negative integer responses"),
        _ => Ok(()),
    }
}

fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let xtx = x.transpose() * x;
    let xty = x.transpose() * y;
    Ok(solve_spd_with_ridge(&xtx, &xty)?.0)
}

fn start(family: Family, data: &Dataset) -> Result<Vec<f64>> {
    let (n, p) = (data.n(), data.p());
    let y = DVector::from_column_slice(data.y());
    Ok(match family {
        Family::Normal => {
            let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { data.x()[(i, j - 1)] });
            let coef = least_squares(&design, &y)?;
            let rss = (&y - &design * &coef).norm_squared();
            let mut t: Vec<f64> = coef.iter().cloned().collect();
            t.push((rss / n as f64).max(1e-300).ln());
            t
        }
        Family::Gamma => {
            let mean = y.mean();
            let var = y.variance();
            let inv = y.map(|v| 1.0 / v);
            let mut b: Vec<f64> = least_squares(data.x(), &inv)?.iter().cloned().collect();
            if (0..n).any(|i| (0..p).map(|j| b[j] * data.x()[(i, j)]).sum::<f64>() <= 0.0) {
                // Fall back to a constant mean if the linear fit leaves the feasible region.
                let row_sum: Vec<f64> = (0..n).map(|i| data.x().row(i).sum()).collect();
                if row_sum.iter().any(|s| *s <= 0.0) {
                    return Err(SemfxError::InvalidInput(
                        "gamma baseline needs a starting point with positive linear predictor".into(),
                    ));
                }
                let c = 1.0 / (mean * row_sum.iter().sum::<f64>() / n as f64);
                b = vec![c; p];
            }
            b.push((mean * mean / var.max(1e-300)).ln());
            b
        }
        Family::Bernoulli => vec![0.0; p + 1],
        Family::Poisson => vec![0.0; p],
    })
}

/// Maximum likelihood for one of the parametric families.
pub fn fit_parametric(data: &Dataset, family: Family) -> Result<ParametricFit> {
    check_response(family, data.y())?;
    let lik = Likelihood::new(family, data);
    let mut theta = start(family, data)?;
    let mut value = lik.value(&theta);
    let n = data.n();
    let mut iterations = 0;
    let mut prev_grad = f64::INFINITY;
    loop {
        let g = lik.score(&theta);
        let grad = g.amax();
        let h = lik.hessian(&theta);
        let (step, _) = solve_spd_with_ridge(&(-&h), &g)?;
        let decrement = g.dot(&step);
        // Stop at the tolerance, or once rounding keeps the gradient from shrinking further.
        if grad <= 1e-11 * n as f64 || decrement <= 1e-24 * value.abs().max(1.0) || grad >= prev_grad {
            break;
        }
        if iterations >= 200 {
            return Err(SemfxError::NonConvergence {
                iterations,
                grad_norm: grad,
                last_beta: theta.clone(),
                last_gamma: vec![],
            });
        }
        let noise = 8.0 * f64::EPSILON * value.abs().max(1.0);
        let mut t = 1.0;
        let mut moved = false;
        while t * decrement > noise || t == 1.0 {
            let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let v = lik.value(&cand);
            // Near the optimum the gain drops below rounding; a full step that
            // does not lose value is then taken on the strength of the gradient.
            let rounding_regime = t == 1.0 && decrement <= 1e3 * noise && v >= value - noise;
            if v.is_finite() && (v >= value + 1e-4 * t * decrement || rounding_regime) {
                theta = cand;
                value = v;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        if !moved {
            if grad > 1e-6 * n as f64 {
                return Err(SemfxError::NonConvergence {
                    iterations,
                    grad_norm: grad,
                    last_beta: theta.clone(),
                    last_gamma: vec![],
                });
            }
            break;
        }
        if decrement <= 1e3 * noise {
            prev_grad = grad;
        }
        if theta.iter().any(|v| v.abs() > 1e8) {
            return Err(SemfxError::Divergence { max_index: theta.iter().fold(0.0, |m, v| m.max(v.abs())) });
        }
    }
    let info = -lik.hessian(&theta);
    let cov_theta = spd_inverse(&info, "parametric information")?;
    let p = data.p();
    let off = family.has_intercept() as usize;
    let b = &theta[off..off + p];
    let (beta, dispersion) = match family {
        Family::Normal => {
            let s2 = theta[p + 1].exp();
            (b.iter().map(|v| v / s2).collect(), Some(s2.sqrt()))
        }
        Family::Gamma => {
            let a = theta[p].exp();
            (b.iter().map(|v| -a * v).collect(), Some(a))
        }
        _ => (b.to_vec(), None),
    };
    Ok(ParametricFit { family, theta, beta, dispersion, loglik: value, cov_theta, iterations, n, p })
}

/// Which effect a per-observation function computes.
#[derive(Clone, Copy)]
enum Target {
    Coefficient,
    Marginal,
    Quantile(f64),
}

fn gamma_std_quantile(shape: f64, tau: f64) -> f64 {
    Gamma::new(shape, 1.0).map(|g| g.inverse_cdf(tau)).unwrap_or(f64::NAN)
}

/// Per-observation effect vector `g(θ, x_i)`.
fn effect_at(fam: Family, p: usize, theta: &[f64], eta: f64, target: Target) -> Vec<f64> {
    let off = fam.has_intercept() as usize;
    let b = &theta[off..off + p];
    let scale = match (fam, target) {
        (Family::Normal, Target::Coefficient) => 1.0 / theta[p + 1].exp(),
        (Family::Normal, _) => 1.0,
        (Family::Gamma, Target::Coefficient) => -theta[p].exp(),
        (Family::Gamma, Target::Marginal) => -1.0 / (eta * eta),
        (Family::Gamma, Target::Quantile(tau)) => {
            let a = theta[p].exp();
            -gamma_std_quantile(a, tau) / (a * eta * eta)
        }
        (_, Target::Coefficient) => 1.0,
        (Family::Bernoulli, _) => {
            let pr = logistic(eta);
            pr * (1.0 - pr)
        }
        (Family::Poisson, _) => eta.exp(),
    };
    b.iter().map(|v| v * scale).collect()
}

fn delta_estimate(pfit: &ParametricFit, data: &Dataset, target: Target, kind: EffectKind) -> Result<EffectEstimate> {
    let lik = Likelihood::new(pfit.family, data);
    let (n, p) = (data.n(), pfit.p);
    let averaged = |theta: &[f64]| -> (Vec<f64>, Vec<Vec<f64>>) {
        let per: Vec<Vec<f64>> =
            (0..n).map(|i| effect_at(pfit.family, p, theta, lik.eta(theta, i), target)).collect();
        let mean = (0..p).map(|k| per.iter().map(|g| g[k]).sum::<f64>() / n as f64).collect();
        (mean, per)
    };
    let (point, per) = averaged(&pfit.theta);
    let d = pfit.theta.len();
    let mut jac = DMatrix::zeros(p, d);
    for k in 0..d {
        let step = 1e-6 * pfit.theta[k].abs().max(1.0);
        let mut up = pfit.theta.clone();
        up[k] += step;
        let mut dn = pfit.theta.clone();
        dn[k] -= step;
        let (gu, _) = averaged(&up);
        let (gd, _) = averaged(&dn);
        for j in 0..p {
            jac[(j, k)] = (gu[j] - gd[j]) / (2.0 * step);
        }
    }
    let mut sigma = &jac * &pfit.cov_theta * jac.transpose() * n as f64;
    for a in 0..p {
        for b in 0..p {
            sigma[(a, b)] += per.iter().map(|g| (g[a] - point[a]) * (g[b] - point[b])).sum::<f64>() / n as f64;
        }
    }
    symmetrize(&mut sigma);
    estimate(kind, data.names(), point, &sigma, n)
}

/// `β` on the tilt scale with delta-method inference.
pub fn parametric_coefficients(pfit: &ParametricFit, data: &Dataset) -> Result<EffectEstimate> {
    delta_estimate(pfit, data, Target::Coefficient, EffectKind::Coefficient)
}

/// Average derivative of the conditional mean.
pub fn parametric_marginal(pfit: &ParametricFit, data: &Dataset) -> Result<EffectEstimate> {
    delta_estimate(pfit, data, Target::Marginal, EffectKind::Marginal)
}

/// Average derivative of the conditional `τ`-quantile; continuous families only.
pub fn parametric_quantile(pfit: &ParametricFit, data: &Dataset, tau: f64) -> Result<EffectEstimate> {
    if matches!(pfit.family, Family::Bernoulli | Family::Poisson) {
        return Err(SemfxError::Unsupported(format!(
            "quantile effects are not defined for the {} family",
            pfit.family.name()
        )));
    }
    if !(tau > 0.0 && tau < 1.0) {
        return Err(SemfxError::InvalidInput(format!("tau must lie in (0, 1), got {tau}")));
    }
    delta_estimate(pfit, data, Target::Quantile(tau), EffectKind::Quantile { tau })
}

/// Coefficients, marginal effect and one quantile effect per `τ`.
pub fn parametric_effects(pfit: &ParametricFit, data: &Dataset, taus: &[f64]) -> Result<Vec<EffectEstimate>> {
    let mut out = vec![parametric_coefficients(pfit, data)?, parametric_marginal(pfit, data)?];
    for &tau in taus {
        out.push(parametric_quantile(pfit, data, tau)?);
    }
    Ok(out)
}
