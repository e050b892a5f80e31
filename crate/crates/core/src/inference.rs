//! Plug-in asymptotic covariances and Wald inference.
//!
//! Population expectations become sample averages over observations, with the
//! inner conditional expectations taken under the fitted model. Blocks are
//! assembled on the internal unit-response scale and converted on output.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::effects::{
    marginal_from_states, quantile_effect, states, EffectEstimate, EffectKind, MarginalEffect,
    QuantileEffect,
};
use crate::error::{Result, SemfxError};
use crate::fit::{Dataset, FittedModel};
use crate::linalg::{eigen_range, spd_inverse, symmetrize};
use crate::model::ConditionalState;

/// Two-sided 95% standard normal critical value.
pub const Z_975: f64 = 1.959964;

#[derive(Debug, Clone)]
pub struct SigmaBlocks {
    /// `n⁻¹ Σ x_i x_iᵀ var*(U|x_i)` (internal scale).
    pub s11: DMatrix<f64>,
    /// `n⁻¹ Σ x_i cov*(U, B̃(U)|x_i)ᵀ`.
    pub s12: DMatrix<f64>,
    /// `n⁻¹ Σ var*(B̃(U)|x_i)`.
    pub s22: DMatrix<f64>,
    /// Schur complement `S11 − S12 S22⁻¹ S21`.
    pub sstar: DMatrix<f64>,
    /// Inverse of the full `(p + m̃)` block matrix.
    pub sigma_inv: DMatrix<f64>,
    /// Asymptotic covariance of `√n(β̂ − β)` on the original scale.
    pub sigma_beta: DMatrix<f64>,
    pub n: usize,
    pub scale: f64,
    pub(crate) states: Vec<ConditionalState>,
}

impl SigmaBlocks {
    pub fn p(&self) -> usize {
        self.s11.nrows()
    }

    /// The assembled matrix `(S11, S12; S21, S22)`.
    pub fn assembled(&self) -> DMatrix<f64> {
        let p = self.p();
        let m = self.s22.nrows();
        let mut full = DMatrix::zeros(p + m, p + m);
        full.view_mut((0, 0), (p, p)).copy_from(&self.s11);
        full.view_mut((0, p), (p, m)).copy_from(&self.s12);
        full.view_mut((p, 0), (m, p)).copy_from(&self.s12.transpose());
        full.view_mut((p, p), (m, m)).copy_from(&self.s22);
        full
    }

    /// `Σ_β` on the internal scale, `Sstar⁻¹`.
    pub fn sigma_beta_internal(&self) -> DMatrix<f64> {
        &self.sigma_beta * (self.scale * self.scale)
    }
}

pub fn sigma_blocks(fit: &FittedModel, data: &Dataset) -> Result<SigmaBlocks> {
    let states = states(fit, data, true)?;
    let xc = data.x_centered();
    let (n, p) = xc.shape();
    let m = fit.free_dim();
    let inv_n = 1.0 / n as f64;
    let mut s11 = DMatrix::zeros(p, p);
    let mut s12 = DMatrix::zeros(p, m);
    let mut s22 = DMatrix::zeros(m, m);
    for (i, st) in states.iter().enumerate() {
        let var = st.variance();
        for a in 0..p {
            for b in 0..p {
                s11[(a, b)] += xc[(i, a)] * xc[(i, b)] * var * inv_n;
            }
            for c in 0..m {
                s12[(a, c)] += xc[(i, a)] * st.cov_yb[c] * inv_n;
            }
        }
        let vb = st.var_b.as_ref().expect("requested");
        for c1 in 0..m {
            for c2 in 0..m {
                s22[(c1, c2)] += vb[c1 * m + c2] * inv_n;
            }
        }
    }
    symmetrize(&mut s11);
    symmetrize(&mut s22);
    let s22_inv = spd_inverse(&s22, "carrier information block")?;
    let mut sstar = &s11 - &s12 * &s22_inv * s12.transpose();
    symmetrize(&mut sstar);
    let (lo, hi) = eigen_range(&sstar);
    if !(lo > 1e-10 * hi.max(1e-300)) {
        return Err(SemfxError::SingularInformation(format!(
            "Schur complement eigenvalues span [{lo:.3e}, {hi:.3e}]"
        )));
    }
    let sigma_beta_int = spd_inverse(&sstar, "Schur complement")?;
    let scale = fit.scale;
    let mut blocks = SigmaBlocks {
        s11,
        s12,
        s22,
        sstar,
        sigma_inv: DMatrix::zeros(0, 0),
        sigma_beta: sigma_beta_int / (scale * scale),
        n,
        scale,
        states,
    };
    blocks.sigma_inv = spd_inverse(&blocks.assembled(), "information matrix")?;
    Ok(blocks)
}

#[derive(Debug, Clone)]
pub struct XiVarParts {
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    /// Sample variance of `var*(U|x_i)` (internal scale).
    pub var_of_condvar: f64,
}

#[derive(Debug, Clone)]
pub struct EtaVarParts {
    pub c1: DMatrix<f64>,
    pub c2: DMatrix<f64>,
    /// Sample variance of `q'(ν_i)` (internal scale).
    pub var_of_qprime: f64,
}

fn sandwich(left: &DMatrix<f64>, right: &DMatrix<f64>, sigma_inv: &DMatrix<f64>) -> DMatrix<f64> {
    let mut full = DMatrix::zeros(left.nrows(), left.ncols() + right.ncols());
    full.view_mut((0, 0), left.shape()).copy_from(left);
    full.view_mut((0, left.ncols()), right.shape()).copy_from(right);
    let mut out = &full * sigma_inv * full.transpose();
    symmetrize(&mut out);
    out
}

fn mean_and_var(v: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = v.clone().count() as f64;
    let mean = v.clone().sum::<f64>() / n;
    let var = v.map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Asymptotic covariance of `√n(ξ̂ − ξ)` on the original scale.
pub fn var_xi(fit: &FittedModel, data: &Dataset, blocks: &SigmaBlocks) -> Result<(XiVarParts, DMatrix<f64>)> {
    let xc = data.x_centered();
    let (n, p) = xc.shape();
    let m = fit.free_dim();
    let beta = DVector::from_column_slice(&fit.beta_internal);
    let st = &blocks.states;
    let (vbar, var_of_condvar) = mean_and_var(st.iter().map(|s| s.variance()));

    let mut k3x = DVector::zeros(p);
    let mut y2b = DVector::zeros(m);
    for (i, s) in st.iter().enumerate() {
        for a in 0..p {
            k3x[a] += s.third_central() * xc[(i, a)] / n as f64;
        }
        for c in 0..m {
            y2b[c] += s.cov_y2b[c] / n as f64;
        }
    }
    let a1 = DMatrix::identity(p, p) * vbar + &beta * k3x.transpose();
    let a2 = &beta * y2b.transpose();
    let mut sigma = sandwich(&a1, &a2, &blocks.sigma_inv) + &beta * beta.transpose() * var_of_condvar;
    symmetrize(&mut sigma);
    let s2 = fit.scale * fit.scale;
    Ok((XiVarParts { a1, a2, var_of_condvar }, sigma * s2))
}

/// Asymptotic covariance of `√n(η̂_τ − η_τ)` on the original scale.
pub fn var_eta(
    fit: &FittedModel,
    data: &Dataset,
    blocks: &SigmaBlocks,
    tau: f64,
) -> Result<(EtaVarParts, DMatrix<f64>)> {
    let effect = quantile_effect(fit, data, tau)?;
    Ok(var_eta_from(fit, data, blocks, &effect))
}

/// As [`var_eta`], reusing already solved quantiles.
pub fn var_eta_from(
    fit: &FittedModel,
    data: &Dataset,
    blocks: &SigmaBlocks,
    effect: &QuantileEffect,
) -> (EtaVarParts, DMatrix<f64>) {
    let xc = data.x_centered();
    let (n, p) = xc.shape();
    let m = fit.free_dim();
    let beta = DVector::from_column_slice(&fit.beta_internal);
    let loc = &effect.locals;
    let (qbar, var_of_qprime) = mean_and_var(loc.iter().map(|l| l.qprime));

    let mut q2x = DVector::zeros(p);
    let mut dqg = DVector::zeros(m);
    for (i, l) in loc.iter().enumerate() {
        for a in 0..p {
            q2x[a] += l.qdprime * xc[(i, a)] / n as f64;
        }
        for c in 0..m {
            dqg[c] += l.dqprime_dgamma[c] / n as f64;
        }
    }
    let c1 = DMatrix::identity(p, p) * qbar + &beta * q2x.transpose();
    let c2 = &beta * dqg.transpose();
    let mut sigma = sandwich(&c1, &c2, &blocks.sigma_inv) + &beta * beta.transpose() * var_of_qprime;
    symmetrize(&mut sigma);
    let s2 = fit.scale * fit.scale;
    (EtaVarParts { c1, c2, var_of_qprime }, sigma * s2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Wald {
    pub se: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub p_value: Vec<f64>,
}

/// `se_k = sqrt(Σ_kk/n)`, 95% normal interval and two-sided p-value.
pub fn wald(point: &[f64], sigma: &DMatrix<f64>, n: usize) -> Result<Wald> {
    let mut out = Wald { se: vec![], ci_lo: vec![], ci_hi: vec![], p_value: vec![] };
    for (k, &pt) in point.iter().enumerate() {
        let mut d = sigma[(k, k)];
        if d < 0.0 {
            if d < -1e-12 {
                return Err(SemfxError::NegativeVariance(d));
            }
            warn!("clamping variance {d:.3e} of coordinate {k} to zero");
            d = 0.0;
        }
        let se = (d / n as f64).sqrt();
        let p = if se > 0.0 {
            erfc(pt.abs() / se / std::f64::consts::SQRT_2)
        } else if pt == 0.0 {
            1.0
        } else {
            0.0
        };
        out.se.push(se);
        out.ci_lo.push(pt - Z_975 * se);
        out.ci_hi.push(pt + Z_975 * se);
        out.p_value.push(p.clamp(0.0, 1.0));
    }
    Ok(out)
}

pub fn estimate(kind: EffectKind, names: &[String], point: Vec<f64>, sigma: &DMatrix<f64>, n: usize) -> Result<EffectEstimate> {
    let w = wald(&point, sigma, n)?;
    Ok(EffectEstimate {
        kind,
        names: names.to_vec(),
        point,
        se: w.se,
        ci_lo: w.ci_lo,
        ci_hi: w.ci_hi,
        p_value: w.p_value,
    })
}

/// Coefficient table for `β̂`.
pub fn coefficient_estimate(fit: &FittedModel, data: &Dataset, blocks: &SigmaBlocks) -> Result<EffectEstimate> {
    estimate(EffectKind::Coefficient, data.names(), fit.beta.clone(), &blocks.sigma_beta, fit.n)
}

/// `ξ̂` with its plug-in standard errors.
pub fn marginal_estimate(fit: &FittedModel, data: &Dataset, blocks: &SigmaBlocks) -> Result<(MarginalEffect, EffectEstimate)> {
    let effect = marginal_from_states(fit, blocks.states.clone());
    let (_, sigma) = var_xi(fit, data, blocks)?;
    let est = estimate(EffectKind::Marginal, data.names(), effect.point.clone(), &sigma, fit.n)?;
    Ok((effect, est))
}

/// `η̂_τ` with its plug-in standard errors.
pub fn quantile_estimate(
    fit: &FittedModel,
    data: &Dataset,
    blocks: &SigmaBlocks,
    tau: f64,
) -> Result<(QuantileEffect, EffectEstimate)> {
    let effect = quantile_effect(fit, data, tau)?;
    let (_, sigma) = var_eta_from(fit, data, blocks, &effect);
    let est = estimate(EffectKind::Quantile { tau }, data.names(), effect.point.clone(), &sigma, fit.n)?;
    Ok((effect, est))
}

/// `(AIC, BIC)` with `p + m − 1` free parameters.
pub fn aic_bic(fit: &FittedModel) -> (f64, f64) {
    information_criteria(fit.loglik, fit.df(), fit.n as f64)
}

pub fn information_criteria(loglik: f64, df: usize, n: f64) -> (f64, f64) {
    let df = df as f64;
    (-2.0 * loglik + 2.0 * df, -2.0 * loglik + n.ln() * df)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub y: f64,
    pub c: f64,
    pub lo: f64,
    pub hi: f64,
}

/// `ĉ(y)` with a pointwise 95% delta-method band from the carrier block of `Σ̂⁻¹/n`.
pub fn curve_band(fit: &FittedModel, blocks: &SigmaBlocks, grid: &[f64]) -> Result<Vec<CurvePoint>> {
    if fit.is_discrete() {
        return Err(SemfxError::Unsupported("carrier curves need a continuous response".into()));
    }
    let p = fit.p();
    let m = fit.free_dim();
    let cov = blocks.sigma_inv.view((p, p), (m, m)) / fit.n as f64;
    grid.iter()
        .map(|&y| {
            let u = (y - fit.lo) / fit.scale;
            let row = fit.model.basis_row(u)?;
            let c = row.dot(&fit.gamma);
            let mut var = 0.0;
            for (&a, &va) in row.cols.iter().zip(&row.vals) {
                for (&b, &vb) in row.cols.iter().zip(&row.vals) {
                    var += va * vb * cov[(a, b)];
                }
            }
            let half = Z_975 * var.max(0.0).sqrt();
            Ok(CurvePoint { y, c, lo: c - half, hi: c + half })
        })
        .collect()
}

/// Evenly spaced grid of `size` points over the fitted support.
pub fn support_grid(fit: &FittedModel, size: usize) -> Vec<f64> {
    let (lo, hi) = (fit.lo, fit.lo + fit.scale);
    match size {
        0 => vec![],
        1 => vec![lo],
        _ => (0..size).map(|k| lo + (hi - lo) * k as f64 / (size - 1) as f64).collect(),
    }
}
