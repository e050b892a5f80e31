//! Serializable command outputs. Every JSON document carries a `command` tag and
//! validates against `schema/report.schema.json`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use semfx::effects::{EffectEstimate, EffectKind};
use semfx::inference::CurvePoint;
use semfx::sim::SimulationReport;
use semfx::SupportDescriptor;

use crate::args::Format;
use crate::error::CliResult;

pub const SCHEMA: &str = include_str!("../schema/report.schema.json");

/// One covariate's estimate of one effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectRow {
    pub method: String,
    /// `beta`, `xi` or `eta`.
    pub effect: String,
    pub tau: Option<f64>,
    pub covariate: String,
    pub estimate: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub p_value: f64,
    /// `p_value < 0.05`.
    pub significant: bool,
}

pub fn effect_rows(method: &str, est: &EffectEstimate) -> Vec<EffectRow> {
    let (effect, tau) = match est.kind {
        EffectKind::Coefficient => ("beta", None),
        EffectKind::Marginal => ("xi", None),
        EffectKind::Quantile { tau } => ("eta", Some(tau)),
    };
    (0..est.point.len())
        .map(|k| EffectRow {
            method: method.to_string(),
            effect: effect.to_string(),
            tau,
            covariate: est.names[k].clone(),
            estimate: est.point[k],
            se: est.se[k],
            ci_lo: est.ci_lo[k],
            ci_hi: est.ci_hi[k],
            p_value: est.p_value[k],
            significant: est.p_value[k] < 0.05,
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub command: String,
    pub response: String,
    pub covariates: Vec<String>,
    pub n: usize,
    pub support: SupportDescriptor,
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub loglik: f64,
    pub df: usize,
    pub aic: f64,
    pub bic: f64,
    /// Free carrier coefficients; the first basis function is pinned to zero.
    pub gamma: Vec<f64>,
    pub dropped_levels: Vec<f64>,
    pub rows: Vec<EffectRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectsReport {
    pub command: String,
    pub response: String,
    pub n: usize,
    /// Average fitted conditional variance of the response.
    pub mean_variance: f64,
    pub taus: Vec<f64>,
    pub rows: Vec<EffectRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveReport {
    pub command: String,
    pub response: String,
    /// Support endpoint where the carrier is pinned to zero.
    pub anchor: f64,
    pub points: Vec<CurvePoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSummary {
    pub method: String,
    pub loglik: Option<f64>,
    pub df: Option<usize>,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub command: String,
    pub response: String,
    pub n: usize,
    pub models: Vec<ModelSummary>,
    pub rows: Vec<EffectRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateReport {
    pub command: String,
    #[serde(flatten)]
    pub report: SimulationReport,
}

pub fn rows_table(rows: &[EffectRow]) -> String {
    let mut out = format!(
        "{:<8} {:<6} {:>5} {:<14} {:>11} {:>10} {:>11} {:>11} {:>9}\n",
        "method", "effect", "tau", "covariate", "estimate", "se", "ci_lo", "ci_hi", "p"
    );
    for r in rows {
        let tau = r.tau.map_or(String::new(), |t| format!("{t}"));
        out.push_str(&format!(
            "{:<8} {:<6} {:>5} {:<14} {:>11.5} {:>10.5} {:>11.5} {:>11.5} {:>9.4}{}\n",
            r.method,
            r.effect,
            tau,
            r.covariate,
            r.estimate,
            r.se,
            r.ci_lo,
            r.ci_hi,
            r.p_value,
            if r.significant { " *" } else { "" }
        ));
    }
    out
}

pub fn curve_table(points: &[CurvePoint]) -> String {
    let mut out = format!("{:>12} {:>12} {:>12} {:>12}\n", "y", "c", "lo", "hi");
    for p in points {
        out.push_str(&format!("{:>12.5} {:>12.5} {:>12.5} {:>12.5}\n", p.y, p.c, p.lo, p.hi));
    }
    out
}

pub fn to_json<T: Serialize>(report: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn to_csv<R: Serialize>(rows: &[R]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| crate::error::CliError::Io(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Render `report` in the requested format.
pub fn render<T: Serialize, R: Serialize>(
    format: Format,
    report: &T,
    rows: &[R],
    table: impl FnOnce() -> String,
) -> CliResult<String> {
    match format {
        Format::Json => to_json(report),
        Format::Csv => to_csv(rows),
        Format::Table => Ok(table()),
    }
}

pub fn write_out(text: &str, output: Option<&Path>) -> CliResult<()> {
    match output {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}
