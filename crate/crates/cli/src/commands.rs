use std::path::Path;

use log::warn;

use semfx::baselines::{fit_parametric, parametric_effects, Family};
use semfx::effects::DEFAULT_TAUS;
use semfx::inference::{
    aic_bic, coefficient_estimate, curve_band, information_criteria, marginal_estimate, quantile_estimate,
    sigma_blocks, support_grid,
};
use semfx::sim::{run_scenario, RunOptions, Scenario, PRESETS};
use semfx::{fit_mle, Dataset, FitConfig, SemfxError, SupportDescriptor};

use crate::args::{Command, DataArgs, Format, OutputArgs, SimulateArgs};
use crate::error::{CliError, CliResult};
use crate::input::load;
use crate::report::{
    curve_table, effect_rows, render, rows_table, to_csv, to_json, write_out, AnalyzeReport, CurveReport,
    EffectRow, EffectsReport, FitReport, ModelSummary, SimulateReport, SCHEMA,
};

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Fit { data, out } => cmd_fit(&data, &out),
        Command::Effects { data, taus, out } => cmd_effects(&data, taus.tau, &out),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Curve { data, grid_size, out } => cmd_curve(&data, grid_size, &out),
        Command::Analyze { data, taus, family, out } => cmd_analyze(&data, taus.tau, family, &out),
        Command::Schema => write_out(SCHEMA, None),
    }
}

/// Quantile levels to report: explicit levels are an error for discrete responses,
/// the default grid is silently skipped.
fn resolve_taus(data: &Dataset, requested: Option<Vec<f64>>) -> CliResult<Vec<f64>> {
    match requested {
        Some(t) if data.support().is_discrete() && !t.is_empty() => Err(CliError::Model(SemfxError::Unsupported(
            "quantile effects are only defined for continuous responses".into(),
        ))),
        Some(t) => Ok(t),
        None if data.support().is_discrete() => Ok(vec![]),
        None => Ok(DEFAULT_TAUS.to_vec()),
    }
}

fn cmd_fit(args: &DataArgs, out: &OutputArgs) -> CliResult<()> {
    let (data, cfg) = load(args)?;
    let fit = fit_mle(&data, &cfg)?;
    let blocks = sigma_blocks(&fit, &data)?;
    let rows = effect_rows("aMLE", &coefficient_estimate(&fit, &data, &blocks)?);
    let (aic, bic) = aic_bic(&fit);
    let report = FitReport {
        command: "fit".into(),
        response: args.response.clone(),
        covariates: data.names().to_vec(),
        n: data.n(),
        support: data.support().clone(),
        converged: true,
        iterations: fit.iterations,
        grad_norm: fit.grad_norm,
        loglik: fit.loglik,
        df: fit.df(),
        aic,
        bic,
        gamma: fit.gamma.clone(),
        dropped_levels: fit.dropped_levels.clone(),
        rows,
    };
    let text = render(out.format, &report, &report.rows, || {
        format!(
            "n = {}  loglik = {:.4}  df = {}  AIC = {:.3}  BIC = {:.3}  iterations = {}\n{}",
            report.n,
            report.loglik,
            report.df,
            report.aic,
            report.bic,
            report.iterations,
            rows_table(&report.rows)
        )
    })?;
    write_out(&text, out.output.as_deref())
}

fn cmd_effects(args: &DataArgs, taus: Option<Vec<f64>>, out: &OutputArgs) -> CliResult<()> {
    let (data, cfg) = load(args)?;
    let taus = resolve_taus(&data, taus)?;
    let fit = fit_mle(&data, &cfg)?;
    let blocks = sigma_blocks(&fit, &data)?;
    let (marginal, xi) = marginal_estimate(&fit, &data, &blocks)?;
    let mut rows = effect_rows("aMLE", &xi);
    for &tau in &taus {
        rows.extend(effect_rows("aMLE", &quantile_estimate(&fit, &data, &blocks, tau)?.1));
    }
    let report = EffectsReport {
        command: "effects".into(),
        response: args.response.clone(),
        n: data.n(),
        mean_variance: marginal.mean_variance,
        taus,
        rows,
    };
    let text = render(out.format, &report, &report.rows, || rows_table(&report.rows))?;
    write_out(&text, out.output.as_deref())
}

fn cmd_curve(args: &DataArgs, grid_size: usize, out: &OutputArgs) -> CliResult<()> {
    let (data, cfg) = load(args)?;
    if data.support().is_discrete() {
        return Err(SemfxError::Unsupported("carrier curves need a continuous response".into()).into());
    }
    if grid_size < 2 {
        return Err(CliError::Usage("--grid-size must be at least 2".into()));
    }
    let fit = fit_mle(&data, &cfg)?;
    let blocks = sigma_blocks(&fit, &data)?;
    let points = curve_band(&fit, &blocks, &support_grid(&fit, grid_size))?;
    let report = CurveReport { command: "curve".into(), response: args.response.clone(), anchor: fit.lo, points };
    let text = render(out.format, &report, &report.points, || curve_table(&report.points))?;
    write_out(&text, out.output.as_deref())
}

/// Baseline families that make sense for the observed response.
fn default_families(data: &Dataset) -> Vec<Family> {
    let y = data.y();
    match data.support() {
        SupportDescriptor::Discrete { levels } => {
            if levels.iter().all(|&l| l == 0.0 || l == 1.0) {
                vec![Family::Bernoulli]
            } else if levels.iter().all(|&l| l >= 0.0 && l.fract() == 0.0) {
                vec![Family::Poisson]
            } else {
                vec![]
            }
        }
        SupportDescriptor::Continuous { .. } => {
            if y.iter().all(|&v| v > 0.0) {
                vec![Family::Normal, Family::Gamma]
            } else {
                vec![Family::Normal]
            }
        }
    }
}

fn cmd_analyze(args: &DataArgs, taus: Option<Vec<f64>>, family: Option<Vec<String>>, out: &OutputArgs) -> CliResult<()> {
    let (data, cfg) = load(args)?;
    let taus = resolve_taus(&data, taus)?;
    let families = match family {
        Some(names) => names
            .iter()
            .map(|s| Family::parse(s).ok_or_else(|| CliError::Usage(format!("unknown family `{s}`"))))
            .collect::<CliResult<Vec<_>>>()?,
        None => default_families(&data),
    };

    let mut models = Vec::new();
    let mut rows = amle_rows(&data, &cfg, &taus, &mut models)?;
    let n = data.n() as f64;
    for fam in families {
        let method = format!("MLE-{}", fam.name());
        let fam_taus: &[f64] = if matches!(fam, Family::Normal | Family::Gamma) { &taus } else { &[] };
        match fit_parametric(&data, fam).and_then(|p| parametric_effects(&p, &data, fam_taus).map(|e| (p, e))) {
            Ok((pfit, est)) => {
                let (aic, bic) = information_criteria(pfit.loglik, pfit.df(), n);
                models.push(ModelSummary {
                    method: method.clone(),
                    loglik: Some(pfit.loglik),
                    df: Some(pfit.df()),
                    aic: Some(aic),
                    bic: Some(bic),
                    error: None,
                });
                rows.extend(est.iter().flat_map(|e| effect_rows(&method, e)));
            }
            Err(e) => {
                warn!("{method} baseline failed: {e}");
                models.push(ModelSummary { method, loglik: None, df: None, aic: None, bic: None, error: Some(e.to_string()) });
            }
        }
    }
    let report = AnalyzeReport { command: "analyze".into(), response: args.response.clone(), n: data.n(), models, rows };
    let text = render(out.format, &report, &report.rows, || {
        let mut s = format!("{:<14} {:>14} {:>4} {:>14} {:>14}\n", "model", "loglik", "df", "AIC", "BIC");
        for m in &report.models {
            match (m.loglik, m.df, m.aic, m.bic) {
                (Some(l), Some(d), Some(a), Some(b)) => {
                    s.push_str(&format!("{:<14} {:>14.4} {:>4} {:>14.3} {:>14.3}\n", m.method, l, d, a, b))
                }
                _ => s.push_str(&format!("{:<14} failed: {}\n", m.method, m.error.as_deref().unwrap_or(""))),
            }
        }
        s.push('\n');
        s + &rows_table(&report.rows)
    })?;
    write_out(&text, out.output.as_deref())
}

fn amle_rows(data: &Dataset, cfg: &FitConfig, taus: &[f64], models: &mut Vec<ModelSummary>) -> CliResult<Vec<EffectRow>> {
    let fit = fit_mle(data, cfg)?;
    let blocks = sigma_blocks(&fit, data)?;
    let (aic, bic) = aic_bic(&fit);
    models.push(ModelSummary {
        method: "aMLE".into(),
        loglik: Some(fit.loglik),
        df: Some(fit.df()),
        aic: Some(aic),
        bic: Some(bic),
        error: None,
    });
    let mut rows = effect_rows("aMLE", &coefficient_estimate(&fit, data, &blocks)?);
    rows.extend(effect_rows("aMLE", &marginal_estimate(&fit, data, &blocks)?.1));
    for &tau in taus {
        rows.extend(effect_rows("aMLE", &quantile_estimate(&fit, data, &blocks, tau)?.1));
    }
    Ok(rows)
}

fn load_scenario(spec: &str) -> CliResult<Scenario> {
    if let Some(s) = Scenario::preset(spec) {
        return Ok(s);
    }
    let path = Path::new(spec);
    if path.is_file() {
        let text = std::fs::read_to_string(path)?;
        return serde_json::from_str(&text)
            .map_err(|e| CliError::Parse(format!("scenario file {}: {e}", path.display())));
    }
    Err(CliError::Usage(format!("unknown scenario `{spec}`; presets are {}", PRESETS.join(", "))))
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut scenario = load_scenario(&args.scenario)?;
    if let Some(r) = args.replicates {
        scenario.replicates = r;
    }
    if let Some(n) = args.n {
        scenario.n = n;
    }
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    if let Some(t) = &args.taus.tau {
        if scenario.is_discrete() && !t.is_empty() {
            return Err(SemfxError::Unsupported("quantile effects are only defined for continuous responses".into()).into());
        }
        scenario.taus = t.clone();
    }
    let opts = RunOptions { workers: args.workers, ..RunOptions::default() };
    let report = SimulateReport { command: "simulate".into(), report: run_scenario(&scenario, &opts)? };
    if let Some(path) = &args.json {
        write_out(&to_json(&report)?, Some(path))?;
    }
    let text = match args.format {
        Format::Json => to_json(&report)?,
        Format::Csv => to_csv(&report.report.rows)?,
        Format::Table => report.report.to_table(),
    };
    write_out(&text, args.output.as_deref())
}
