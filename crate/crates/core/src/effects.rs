//! Marginal effect `ξ = β·E{var(Y|βᵀX)}` and quantile effect `η_τ = β·E{Q'_τ(Y|βᵀX)}`.
//!
//! All reported quantities are on the original covariate and response scale.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SemfxError};
use crate::fit::{Dataset, FittedModel};
use crate::model::{ConditionalState, QuantileLocal};

/// CLI default quantile levels.
pub const DEFAULT_TAUS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EffectKind {
    Coefficient,
    Marginal,
    Quantile { tau: f64 },
}

impl EffectKind {
    pub fn label(&self) -> String {
        match self {
            EffectKind::Coefficient => "beta".into(),
            EffectKind::Marginal => "xi".into(),
            EffectKind::Quantile { tau } => format!("eta({tau})"),
        }
    }
}

/// Per-covariate estimates with Wald inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub kind: EffectKind,
    pub names: Vec<String>,
    pub point: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub p_value: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalEffect {
    pub point: Vec<f64>,
    /// `n⁻¹ Σ var(Y|x_i)` on the response scale.
    pub mean_variance: f64,
    /// Per-observation conditional states on the internal scale.
    pub states: Vec<ConditionalState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileEffect {
    pub tau: f64,
    pub point: Vec<f64>,
    /// `n⁻¹ Σ q'(ν_i)` on the response scale.
    pub mean_qprime: f64,
    /// Per-observation quantile solutions on the internal scale.
    pub locals: Vec<QuantileLocal>,
}

pub(crate) fn states(fit: &FittedModel, data: &Dataset, with_var_b: bool) -> Result<Vec<ConditionalState>> {
    check_data(fit, data)?;
    fit.linear_indices(data)
        .into_iter()
        .enumerate()
        .map(|(i, nu)| {
            fit.model.conditional(nu, &fit.gamma, with_var_b).map_err(|e| at_row(e, i))
        })
        .collect()
}

fn at_row(e: SemfxError, index: usize) -> SemfxError {
    match e {
        SemfxError::Numeric { what, .. } => SemfxError::Numeric { index, what },
        other => other,
    }
}

fn check_data(fit: &FittedModel, data: &Dataset) -> Result<()> {
    if data.p() != fit.p() || data.n() != fit.n {
        return Err(SemfxError::InvalidInput("dataset does not match the fitted model".into()));
    }
    Ok(())
}

/// `ξ̂ = β̂ · n⁻¹ Σ var*(Y|x_i)`.
pub fn marginal_effect(fit: &FittedModel, data: &Dataset) -> Result<MarginalEffect> {
    let states = states(fit, data, false)?;
    Ok(marginal_from_states(fit, states))
}

pub(crate) fn marginal_from_states(fit: &FittedModel, states: Vec<ConditionalState>) -> MarginalEffect {
    let s2 = fit.scale * fit.scale;
    let mean_variance = s2 * states.iter().map(|s| s.variance()).sum::<f64>() / states.len() as f64;
    let point = fit.beta.iter().map(|b| b * mean_variance).collect();
    MarginalEffect { point, mean_variance, states }
}

/// `η̂_τ = β̂ · n⁻¹ Σ q'(ν_i)`; continuous responses only.
pub fn quantile_effect(fit: &FittedModel, data: &Dataset, tau: f64) -> Result<QuantileEffect> {
    check_data(fit, data)?;
    if fit.is_discrete() {
        return Err(SemfxError::Unsupported(
            "quantile effects are only defined for continuous responses".into(),
        ));
    }
    let locals = fit
        .linear_indices(data)
        .into_iter()
        .enumerate()
        .map(|(i, nu)| fit.model.quantile(nu, &fit.gamma, tau).map_err(|e| at_row(e, i)))
        .collect::<Result<Vec<_>>>()?;
    let s2 = fit.scale * fit.scale;
    let mean_qprime = s2 * locals.iter().map(|l| l.qprime).sum::<f64>() / locals.len() as f64;
    let point = fit.beta.iter().map(|b| b * mean_qprime).collect();
    Ok(QuantileEffect { tau, point, mean_qprime, locals })
}
