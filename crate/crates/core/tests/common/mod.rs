//! Shared oracles for the integration, property and acceptance suites.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson, Uniform};

use semfx::effects::{marginal_effect, quantile_effect};
use semfx::fit::{build_spline_model, fit_with_model, loglik_grad_hess};
use semfx::inference::sigma_blocks;
use semfx::sim::{generate, CovariateLaw, ResponseLaw, Scenario};
use semfx::{fit_mle, Dataset, FitConfig, FittedModel, SupportDescriptor, TiltModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `‖a − b‖∞ / max(‖b‖∞, floor)`.
pub fn rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(floor, f64::max);
    num / den
}

pub fn preset_data(name: &str, n: usize, index: usize) -> Dataset {
    let mut s = Scenario::preset(name).unwrap();
    s.n = n;
    generate(&s, index).unwrap()
}

/// Truncated-normal responses on `[-5, 5]` with `p` correlated normal covariates.
pub fn tilted_data(n: usize, p: usize, seed: u64) -> Dataset {
    let beta: Vec<f64> = (0..p).map(|j| 0.6 - 0.4 * j as f64).collect();
    let s = Scenario {
        name: "tilted".into(),
        covariates: CovariateLaw::MvNormal { dim: p, rho: 0.2 },
        response: ResponseLaw::TruncNormal { sigma: 1.0, a: -5.0, b: 5.0 },
        beta,
        n,
        replicates: 1,
        taus: vec![],
        seed,
    };
    generate(&s, 0).unwrap()
}

/// Three-level response `{0, 1, 2}` with one covariate.
pub fn three_level_data(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = r.random_range(-1.5..1.5);
        let w = [1.0, (0.8 * x + 0.3).exp(), (1.6 * x - 0.2).exp()];
        let u: f64 = r.random::<f64>() * w.iter().sum::<f64>();
        let level = if u < w[0] { 0.0 } else if u < w[0] + w[1] { 1.0 } else { 2.0 };
        rows.push(vec![x, r.random_range(0.0..1.0)]);
        y.push(level);
    }
    Dataset::from_rows(&rows, y, SupportDescriptor::discrete_range(2)).unwrap()
}

/// Income-like data with the shape of a labour-survey extract: 7 covariates
/// (age, age²/100, education, young children, older children, foreign, unearned).
pub fn survey_like_data(n: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let age_d = Uniform::new(20.0, 62.0).unwrap();
    let educ_d = Normal::new(11.0, 3.0).unwrap();
    let kid_young = Poisson::new(0.35).unwrap();
    let kid_old = Poisson::new(0.7).unwrap();
    let foreign = Bernoulli::new(0.25).unwrap();
    let noise = Normal::new(0.0, 0.8).unwrap();
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let age: f64 = age_d.sample(&mut r);
        let educ: f64 = educ_d.sample(&mut r);
        let ky: f64 = kid_young.sample(&mut r);
        let ko: f64 = kid_old.sample(&mut r);
        let fo = foreign.sample(&mut r) as u8 as f64;
        let other: f64 = r.random_range(0.0..2.0);
        let mean = 6.0 + 0.25 * age - 0.3 * age * age / 100.0 + 0.06 * educ - 0.15 * ky - 0.05 * ko + 0.2 * fo
            + 0.1 * other;
        let v: f64 = (mean + noise.sample(&mut r)).clamp(7.0, 14.0);
        rows.push(vec![age, age * age / 100.0, educ, ky, ko, fo, other]);
        y.push(v);
    }
    let names = ["age", "age2", "educ", "kids_young", "kids_old", "foreign", "unearned"];
    Dataset::from_rows(&rows, y, SupportDescriptor::continuous(7.0, 14.0))
        .unwrap()
        .with_names(names.iter().map(|s| s.to_string()).collect())
        .unwrap()
}

pub fn random_state(r: &mut ChaCha8Rng, p: usize, m: usize, spread: f64) -> (Vec<f64>, Vec<f64>) {
    let b = (0..p).map(|_| r.random_range(-spread..spread)).collect();
    let g = (0..m).map(|_| r.random_range(-spread..spread)).collect();
    (b, g)
}

fn split(theta: &[f64], p: usize) -> (Vec<f64>, Vec<f64>) {
    (theta[..p].to_vec(), theta[p..].to_vec())
}

/// Relative errors of the analytic gradient (vs central differences of the
/// log-likelihood) and Hessian (vs central differences of the gradient).
pub fn derivative_errors(data: &Dataset, model: &TiltModel, beta: &[f64], gamma: &[f64]) -> (f64, f64) {
    let p = beta.len();
    let theta: Vec<f64> = beta.iter().chain(gamma).cloned().collect();
    let d = theta.len();
    let at = |t: &[f64]| {
        let (b, g) = split(t, p);
        loglik_grad_hess(data, model, &b, &g).unwrap()
    };
    let base = at(&theta);
    let hess = base.hess.clone().unwrap();
    let mut fd_grad = vec![0.0; d];
    let mut fd_hess = DMatrix::zeros(d, d);
    for k in 0..d {
        let h = 1e-5 * theta[k].abs().max(1.0);
        let mut up = theta.clone();
        up[k] += h;
        let mut dn = theta.clone();
        dn[k] -= h;
        let (eu, ed) = (at(&up), at(&dn));
        fd_grad[k] = (eu.value_internal - ed.value_internal) / (2.0 * h);
        let col = (&eu.grad - &ed.grad) / (2.0 * h);
        fd_hess.set_column(k, &col);
    }
    let g_err = rel_err(base.grad.as_slice(), &fd_grad, 1e-8);
    let h_err = rel_err(hess.as_slice(), fd_hess.as_slice(), 1e-8);
    (g_err, h_err)
}

/// Composite Simpson rule, independent of the Gauss–Legendre grid used by the model.
pub fn simpson<F: Fn(f64) -> f64>(a: f64, b: f64, panels: usize, f: F) -> f64 {
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + h * i as f64);
    }
    s * h / 3.0
}

/// `|∫ f(u | ν) du − 1|` on the internal unit interval.
pub fn normalization_error(model: &TiltModel, nu: f64, gamma: &[f64]) -> f64 {
    let basis = model.basis().expect("continuous model");
    let log_z = model.log_normalizer(nu, gamma).unwrap();
    let total = simpson(0.0, 1.0, 20_000, |u| (u * nu + basis.curve(gamma, u).unwrap() - log_z).exp());
    (total - 1.0).abs()
}

/// Errors of `q'` and `q''` against central differences of `q(ν)`.
pub fn quantile_derivative_errors(model: &TiltModel, nu: f64, gamma: &[f64], tau: f64) -> (f64, f64) {
    let h = 1e-4;
    let ql = model.quantile(nu, gamma, tau).unwrap();
    let up = model.quantile(nu + h, gamma, tau).unwrap();
    let dn = model.quantile(nu - h, gamma, tau).unwrap();
    let fd1 = (up.q - dn.q) / (2.0 * h);
    let fd2 = (up.q - 2.0 * ql.q + dn.q) / (h * h);
    let e1 = (ql.qprime - fd1).abs() / ql.qprime.abs().max(1e-3);
    let e2 = (ql.qdprime - fd2).abs() / ql.qdprime.abs().max(1e-1);
    (e1, e2)
}

/// Largest relative change of `β̂, ξ̂, η̂_τ` when covariate `j` is multiplied by `k`
/// (the `j`-th entries are compared after multiplying back by `k`).
pub fn rescaling_error(data: &Dataset, j: usize, k: f64, tau: f64) -> f64 {
    let cfg = FitConfig::default();
    let scaled = data.with_column_scaled(j, k).unwrap();
    let a = fit_mle(data, &cfg).unwrap();
    let b = fit_mle(&scaled, &cfg).unwrap();
    let unscale = |v: Vec<f64>| -> Vec<f64> {
        v.into_iter().enumerate().map(|(i, x)| if i == j { x * k } else { x }).collect()
    };
    let mut err = rel_err(&unscale(b.beta.clone()), &a.beta, 1e-8);
    err = err.max(rel_err(
        &unscale(marginal_effect(&b, &scaled).unwrap().point),
        &marginal_effect(&a, data).unwrap().point,
        1e-8,
    ));
    if !a.is_discrete() {
        err = err.max(rel_err(
            &unscale(quantile_effect(&b, &scaled, tau).unwrap().point),
            &quantile_effect(&a, data, tau).unwrap().point,
            1e-8,
        ));
    }
    err
}

/// Distance between optima reached from zero and from a perturbed start.
pub fn restart_error(data: &Dataset, r: &mut ChaCha8Rng) -> f64 {
    let cfg = FitConfig::default();
    let model = build_spline_model(data, &cfg).unwrap();
    let a = fit_with_model(data, model.clone(), &cfg).unwrap();
    let (db, dg) = random_state(r, data.p(), model.free_dim(), 0.5);
    let start_b: Vec<f64> = a.beta_internal.iter().zip(&db).map(|(x, d)| x + d).collect();
    let start_g: Vec<f64> = a.gamma.iter().zip(&dg).map(|(x, d)| x + d).collect();
    let b = fit_with_model(data, model, &FitConfig { start: Some((start_b, start_g)), ..cfg }).unwrap();
    let ta: Vec<f64> = a.beta_internal.iter().chain(&a.gamma).cloned().collect();
    let tb: Vec<f64> = b.beta_internal.iter().chain(&b.gamma).cloned().collect();
    rel_err(&tb, &ta, 1.0)
}

/// `max |−H/n − Σ̂|` at the fitted parameters.
pub fn block_identity_error(fit: &FittedModel, data: &Dataset) -> f64 {
    let blocks = sigma_blocks(fit, data).unwrap();
    let eval = loglik_grad_hess(data, &fit.model, &fit.beta_internal, &fit.gamma).unwrap();
    let neg_h = -eval.hess.unwrap() / data.n() as f64;
    (neg_h - blocks.assembled()).amax()
}

/// For a discrete response: the inverse of the plug-in `β̂` covariance equals the
/// average conditional second moment of the efficient score
/// `x(y − E y) − Σ₁₂Σ₂₂⁻¹(b(y) − E b)`, evaluated level by level.
pub fn efficiency_identity_error(fit: &FittedModel, data: &Dataset) -> f64 {
    let blocks = sigma_blocks(fit, data).unwrap();
    let levels = fit.model.levels().unwrap().to_vec();
    let (p, m) = (data.p(), fit.free_dim());
    let s22_inv = blocks.s22.clone().try_inverse().unwrap();
    let proj = &blocks.s12 * s22_inv;
    let u: Vec<f64> = levels.iter().map(|l| (l - data.lo()) / data.scale()).collect();
    let mut acc = DMatrix::zeros(p, p);
    for (i, nu) in fit.linear_indices(data).into_iter().enumerate() {
        let (_, probs) = fit.model.probabilities(nu, &fit.gamma).unwrap();
        let mean: f64 = probs.iter().zip(&u).map(|(pr, y)| pr * y).sum();
        let mean_b = DVector::from_iterator(m, probs.iter().skip(1).cloned());
        let x = DVector::from_vec(data.centered_row(i));
        for (k, (&pr, &y)) in probs.iter().zip(&u).enumerate() {
            let mut bk = DVector::zeros(m);
            if k > 0 {
                bk[k - 1] = 1.0;
            }
            let s = &x * (y - mean) - &proj * (bk - &mean_b);
            acc += &s * s.transpose() * pr;
        }
    }
    acc /= data.n() as f64;
    let inv = blocks.sigma_beta_internal().try_inverse().unwrap();
    (acc - &inv).amax() / inv.amax()
}
