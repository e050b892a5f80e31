mod common;

use common::*;
use nalgebra::{DMatrix, DVector};

use semfx::baselines::{fit_parametric, parametric_marginal, parametric_quantile, Family};
use semfx::effects::{marginal_effect, quantile_effect};
use semfx::fit::build_spline_model;
use semfx::inference::{curve_band, marginal_estimate, sigma_blocks, coefficient_estimate};
use semfx::sim::{generate, CovariateLaw, ResponseLaw, Scenario};
use semfx::{fit_mle, Dataset, FitConfig, FittedModel, SupportDescriptor, TiltModel};

fn ks_uniform(mut p: Vec<f64>) -> f64 {
    p.sort_by(f64::total_cmp);
    let n = p.len() as f64;
    p.iter()
        .enumerate()
        .map(|(i, &v)| (v - i as f64 / n).abs().max(((i + 1) as f64 / n - v).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn null_effects_have_uniform_p_values() {
    let s = Scenario {
        name: "null".into(),
        covariates: CovariateLaw::MvNormal { dim: 2, rho: 0.1 },
        response: ResponseLaw::TruncNormal { sigma: 1.0, a: -3.0, b: 3.0 },
        beta: vec![0.0, 0.0],
        n: 200,
        replicates: 300,
        taus: vec![],
        seed: 99,
    };
    let mut p_beta = Vec::new();
    let mut p_xi = Vec::new();
    for i in 0..s.replicates {
        let data = generate(&s, i).unwrap();
        let fit = fit_mle(&data, &FitConfig::default()).unwrap();
        let blocks = sigma_blocks(&fit, &data).unwrap();
        p_beta.push(coefficient_estimate(&fit, &data, &blocks).unwrap().p_value[0]);
        p_xi.push(marginal_estimate(&fit, &data, &blocks).unwrap().1.p_value[0]);
    }
    // 1% Kolmogorov–Smirnov critical value for 300 draws is about 0.094.
    for p in [p_beta, p_xi] {
        let rejections = p.iter().filter(|v| **v < 0.05).count() as f64 / p.len() as f64;
        assert!((0.02..=0.09).contains(&rejections), "rejection rate {rejections}");
        let d = ks_uniform(p);
        assert!(d < 0.094, "KS distance {d}");
    }
}

#[test]
fn survey_like_data_shows_concave_age_profile() {
    let data = survey_like_data(871, 2024);
    let fit = fit_mle(&data, &FitConfig::default()).unwrap();
    let blocks = sigma_blocks(&fit, &data).unwrap();
    let (_, xi) = marginal_estimate(&fit, &data, &blocks).unwrap();
    assert_eq!(&xi.names[..2], ["age", "age2"]);
    assert!(xi.point[0] > 0.0 && xi.p_value[0] < 0.05, "age {:?}", (xi.point[0], xi.p_value[0]));
    assert!(xi.point[1] < 0.0 && xi.p_value[1] < 0.05, "age2 {:?}", (xi.point[1], xi.p_value[1]));
}

#[test]
fn truncated_gamma_carrier_follows_log_shape() {
    let data = preset_data("trunc-gamma", 2000, 0);
    let fit = fit_mle(&data, &FitConfig::default()).unwrap();
    let blocks = sigma_blocks(&fit, &data).unwrap();
    let grid: Vec<f64> = (0..=36).map(|k| 0.2 + 0.05 * k as f64).collect();
    let band = curve_band(&fit, &blocks, &grid).unwrap();
    // Regress ĉ on (1, y, ln y); the shape parameter 5 gives a log coefficient of 4.
    let design = DMatrix::from_fn(grid.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => grid[i],
        _ => grid[i].ln(),
    });
    let c = DVector::from_iterator(grid.len(), band.iter().map(|p| p.c));
    let coef = (design.transpose() * &design).lu().solve(&(design.transpose() * c)).unwrap();
    assert!((coef[2] - 4.0).abs() < 1.0, "log coefficient {}", coef[2]);
    let slope = |a: f64, b: f64| (fit.carrier(b).unwrap() - fit.carrier(a).unwrap()) / (b - a);
    assert!(slope(0.02, 0.2) > 3.0 * slope(1.0, 1.5).abs());
    assert!(band.iter().all(|p| p.lo <= p.c && p.c <= p.hi));
}

/// Hand-built fitted model with the carrier fixed at `c`.
fn embedded(data: &Dataset, model: TiltModel, beta: Vec<f64>, gamma: Vec<f64>) -> FittedModel {
    FittedModel {
        beta_internal: beta.iter().map(|b| b * data.scale()).collect(),
        beta,
        gamma,
        loglik: f64::NAN,
        iterations: 0,
        grad_norm: 0.0,
        model,
        support: data.support().clone(),
        dropped_levels: vec![],
        n: data.n(),
        scale: data.scale(),
        lo: data.lo(),
    }
}

#[test]
fn normal_formulas_match_the_embedded_semiparametric_model() {
    let raw = preset_data("normal", 400, 3);
    let pfit = fit_parametric(&raw, Family::Normal).unwrap();
    let sigma = pfit.dispersion.unwrap();
    let (lo, hi) = raw.y().iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    let (lo, hi) = (lo - 12.0 * sigma, hi + 12.0 * sigma);
    let rows: Vec<Vec<f64>> = (0..raw.n()).map(|i| raw.x().row(i).iter().cloned().collect()).collect();
    let data = Dataset::from_rows(&rows, raw.y().to_vec(), SupportDescriptor::Continuous { lo, hi, nodes: 1601 }).unwrap();
    let model = build_spline_model(&data, &FitConfig { interior_knots: Some(12), ..FitConfig::default() }).unwrap();

    // θ(x) = a + bᵀx, so on centered covariates c(y) = y·θ(x̄)/σ² − y²/(2σ²).
    let p = data.p();
    let (a, b) = (pfit.theta[0], &pfit.theta[1..=p]);
    let theta_bar = a + b.iter().zip(data.x_means()).map(|(b, m)| b * m).sum::<f64>();
    let s2 = sigma * sigma;
    let carrier = |u: f64| {
        let y = lo + u * data.scale();
        y * theta_bar / s2 - y * y / (2.0 * s2)
    };
    let basis = model.basis().unwrap();
    let grid: Vec<f64> = (0..=400).map(|k| k as f64 / 400.0).collect();
    let design = DMatrix::from_fn(grid.len(), basis.free_len(), |i, j| basis.eval_free(grid[i]).unwrap()[j]);
    let target = DVector::from_iterator(grid.len(), grid.iter().map(|&u| carrier(u) - carrier(0.0)));
    let gamma = (design.transpose() * &design).lu().solve(&(design.transpose() * target)).unwrap();
    let fit = embedded(&data, model, pfit.beta.clone(), gamma.as_slice().to_vec());

    let xi = marginal_effect(&fit, &data).unwrap();
    let xi_param = parametric_marginal(&pfit, &raw).unwrap();
    assert!(rel_err(&xi.point, &xi_param.point, 1e-12) < 1e-6, "{:?} vs {:?}", xi.point, xi_param.point);
    let eta = quantile_effect(&fit, &data, 0.3).unwrap();
    let eta_param = parametric_quantile(&pfit, &raw, 0.3).unwrap();
    assert!(rel_err(&eta.point, &eta_param.point, 1e-12) < 1e-6);
}

#[test]
fn poisson_formulas_match_the_embedded_semiparametric_model() {
    let raw = preset_data("poisson", 400, 5);
    let pfit = fit_parametric(&raw, Family::Poisson).unwrap();
    let top = 80usize;
    let rows: Vec<Vec<f64>> = (0..raw.n()).map(|i| raw.x().row(i).iter().cloned().collect()).collect();
    let data = Dataset::from_rows(&rows, raw.y().to_vec(), SupportDescriptor::discrete_range(top)).unwrap();
    let model = TiltModel::discrete((0..=top).map(|k| k as f64).collect()).unwrap();
    // log μ = bᵀx: relative to level 0, γ_k = k·bᵀx̄ − ln k!.
    let lin_bar: f64 = pfit.beta.iter().zip(data.x_means()).map(|(b, m)| b * m).sum();
    let mut log_fact = 0.0;
    let gamma: Vec<f64> = (1..=top)
        .map(|k| {
            log_fact += (k as f64).ln();
            k as f64 * lin_bar - log_fact
        })
        .collect();
    let fit = embedded(&data, model, pfit.beta.clone(), gamma);
    let xi = marginal_effect(&fit, &data).unwrap();
    let xi_param = parametric_marginal(&pfit, &raw).unwrap();
    assert!(rel_err(&xi.point, &xi_param.point, 1e-12) < 1e-10, "{:?} vs {:?}", xi.point, xi_param.point);
}
