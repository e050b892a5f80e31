//! Joint maximization of the spline-approximated log-likelihood in `(β, γ)`.
//!
//! Internally covariates are centered and a continuous response is mapped
//! onto `[0, 1]` via `u = (y − lo)/(hi − lo)`. The tilt is invariant to both
//! transformations up to `β_u = (hi − lo)·β` and a reparameterization of the
//! carrier, so the original-scale quantities are recovered exactly.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SemfxError};
use crate::linalg::solve_spd_with_ridge;
use crate::model::{linear_index, SparseRow, SupportDescriptor, TiltModel};
use crate::spline::{interior_knot_count, KnotVector, SplineBasis};

#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: Vec<f64>,
    support: SupportDescriptor,
    x_means: Vec<f64>,
    xc: DMatrix<f64>,
    lo: f64,
    scale: f64,
    u: Vec<f64>,
    names: Vec<String>,
}

impl Dataset {
    /// `x` is `n × p` on the original covariate scale.
    pub fn new(x: DMatrix<f64>, y: Vec<f64>, support: SupportDescriptor) -> Result<Self> {
        support.validate()?;
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(SemfxError::InvalidInput("dataset needs at least one row and one covariate".into()));
        }
        if y.len() != n {
            return Err(SemfxError::InvalidInput(format!(
                "response has {} entries but covariates have {n} rows",
                y.len()
            )));
        }
        if let Some((i, _)) = x.row_iter().enumerate().find(|(_, r)| r.iter().any(|v| !v.is_finite())) {
            return Err(SemfxError::InvalidInput(format!("non-finite covariate in row {i}")));
        }
        if let Some((i, v)) = y.iter().enumerate().find(|(_, v)| !v.is_finite() || !support.contains(**v)) {
            return Err(SemfxError::InvalidInput(format!(
                "response {v} in row {i} is not in the support"
            )));
        }
        let x_means: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
        let mut xc = x.clone();
        for j in 0..p {
            for i in 0..n {
                xc[(i, j)] -= x_means[j];
            }
        }
        let (lo, scale) = match &support {
            SupportDescriptor::Continuous { lo, hi, .. } => (*lo, hi - lo),
            SupportDescriptor::Discrete { .. } => (0.0, 1.0),
        };
        let u = y.iter().map(|v| (v - lo) / scale).collect();
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Ok(Dataset { x, y, support, x_means, xc, lo, scale, u, names })
    }

    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>, support: SupportDescriptor) -> Result<Self> {
        let p = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != p) {
            return Err(SemfxError::InvalidInput("ragged covariate rows".into()));
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Self::new(x, y, support)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.p() {
            return Err(SemfxError::InvalidInput("one name per covariate is required".into()));
        }
        self.names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn support(&self) -> &SupportDescriptor {
        &self.support
    }

    pub fn x_means(&self) -> &[f64] {
        &self.x_means
    }

    /// Centered covariates used by the likelihood.
    pub fn x_centered(&self) -> &DMatrix<f64> {
        &self.xc
    }

    pub fn centered_row(&self, i: usize) -> Vec<f64> {
        self.xc.row(i).iter().cloned().collect()
    }

    /// Response on the internal scale.
    pub fn response_internal(&self) -> &[f64] {
        &self.u
    }

    /// `hi − lo` for continuous supports, 1 for discrete.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    /// Copy with covariate column `j` multiplied by `k`.
    pub fn with_column_scaled(&self, j: usize, k: f64) -> Result<Self> {
        let mut x = self.x.clone();
        x.column_mut(j).scale_mut(k);
        Dataset::new(x, self.y.clone(), self.support.clone())?.with_names(self.names.clone())
    }

    /// Copy restricted to the given response levels (discrete supports).
    fn with_levels(&self, levels: Vec<f64>) -> Result<Self> {
        Dataset::new(self.x.clone(), self.y.clone(), SupportDescriptor::Discrete { levels })?
            .with_names(self.names.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Relative log-likelihood change accepted as converged.
    pub tol: f64,
    /// Gradient sup-norm threshold, multiplied by `n`.
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Spline order (4 = cubic).
    pub order: usize,
    /// Interior knot count override; default `⌈0.7 n^{1/5}⌉`.
    pub interior_knots: Option<usize>,
    /// Quadrature node override; default taken from the support descriptor.
    pub quad_nodes: Option<usize>,
    /// Largest `|βᵀx|` on the internal scale before declaring divergence.
    pub max_linear_index: f64,
    pub armijo: f64,
    /// Starting point `(β, γ)` on the internal scale; zeros by default.
    pub start: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tol: 1e-6,
            grad_tol: 1e-6,
            max_iter: 200,
            order: 4,
            interior_knots: None,
            quad_nodes: None,
            max_linear_index: 1e4,
            armijo: 1e-4,
            start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FittedModel {
    /// `β̂` on the original covariate and response scale.
    pub beta: Vec<f64>,
    /// `β̂` on the internal unit-response scale.
    pub beta_internal: Vec<f64>,
    /// Free carrier coefficients (anchor dropped).
    pub gamma: Vec<f64>,
    /// Log-likelihood with respect to the original response measure.
    pub loglik: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub model: TiltModel,
    pub support: SupportDescriptor,
    /// Configured discrete levels that never occurred and were removed.
    pub dropped_levels: Vec<f64>,
    pub n: usize,
    pub scale: f64,
    pub lo: f64,
}

impl FittedModel {
    pub fn p(&self) -> usize {
        self.beta.len()
    }

    pub fn free_dim(&self) -> usize {
        self.gamma.len()
    }

    /// Free parameter count `p + m − 1`.
    pub fn df(&self) -> usize {
        self.p() + self.free_dim()
    }

    pub fn is_discrete(&self) -> bool {
        self.model.is_discrete()
    }

    /// `ν_i = β̂ᵀx_i` (centered covariates, internal scale) for every observation.
    pub fn linear_indices(&self, data: &Dataset) -> Vec<f64> {
        (0..data.n()).map(|i| row_dot(data.x_centered(), i, &self.beta_internal)).collect()
    }

    /// Spline basis on the original response scale.
    pub fn basis_original(&self) -> Option<SplineBasis> {
        let b = self.model.basis()?;
        let kv = b.knots().rescaled(self.lo, self.lo + self.scale).ok()?;
        Some(SplineBasis::with_anchor(kv, b.anchor()))
    }

    /// `ĉ(y) = B̃(u(y))ᵀγ̂`, anchored at the left support endpoint.
    pub fn carrier(&self, y: f64) -> Result<f64> {
        self.model.carrier(&self.gamma, (y - self.lo) / self.scale)
    }
}

/// Value, gradient and Hessian of the log-likelihood at an internal-scale `(β, γ)`.
#[derive(Debug, Clone)]
pub struct LikEval {
    /// Log-likelihood with respect to the original response measure.
    pub value: f64,
    /// Log-likelihood on the internal scale (what Newton maximizes).
    pub value_internal: f64,
    pub grad: DVector<f64>,
    pub hess: Option<DMatrix<f64>>,
    pub max_abs_index: f64,
}

fn row_dot(x: &DMatrix<f64>, i: usize, beta: &[f64]) -> f64 {
    (0..x.ncols()).map(|j| x[(i, j)] * beta[j]).sum()
}

struct Objective<'a> {
    data: &'a Dataset,
    model: &'a TiltModel,
    rows: Vec<SparseRow>,
}

impl<'a> Objective<'a> {
    fn new(data: &'a Dataset, model: &'a TiltModel) -> Result<Self> {
        let rows = data
            .response_internal()
            .iter()
            .map(|&u| model.basis_row(u))
            .collect::<Result<Vec<_>>>()?;
        Ok(Objective { data, model, rows })
    }

    fn log_jacobian(&self) -> f64 {
        self.data.n() as f64 * self.data.scale().ln()
    }

    fn value(&self, beta: &[f64], gamma: &[f64]) -> Result<(f64, f64)> {
        let xc = self.data.x_centered();
        let u = self.data.response_internal();
        let mut total = 0.0;
        let mut max_index = 0.0f64;
        for i in 0..self.data.n() {
            let nu = row_dot(xc, i, beta);
            max_index = max_index.max(nu.abs());
            let log_z = self
                .model
                .log_normalizer(nu, gamma)
                .map_err(|e| observation_error(e, i))?;
            total += u[i] * nu + self.rows[i].dot(gamma) - log_z;
        }
        if !total.is_finite() {
            return Err(SemfxError::Numeric { index: 0, what: "log-likelihood".into() });
        }
        Ok((total, max_index))
    }

    fn evaluate(&self, beta: &[f64], gamma: &[f64], with_hess: bool) -> Result<LikEval> {
        let p = self.data.p();
        let m = self.model.free_dim();
        let d = p + m;
        let xc = self.data.x_centered();
        let u = self.data.response_internal();
        let mut value = 0.0;
        let mut grad = DVector::zeros(d);
        let mut hess = if with_hess { Some(DMatrix::zeros(d, d)) } else { None };
        let mut max_index = 0.0f64;
        let mut x = vec![0.0; p];
        for i in 0..self.data.n() {
            for (j, xj) in x.iter_mut().enumerate() {
                *xj = xc[(i, j)];
            }
            let nu = linear_index(&x, beta);
            max_index = max_index.max(nu.abs());
            let st = self
                .model
                .conditional(nu, gamma, with_hess)
                .map_err(|e| observation_error(e, i))?;
            value += u[i] * nu + self.rows[i].dot(gamma) - st.log_z;
            let resid = u[i] - st.mean;
            for j in 0..p {
                grad[j] += x[j] * resid;
            }
            for c in 0..m {
                grad[p + c] -= st.mean_b[c];
            }
            for (&c, &v) in self.rows[i].cols.iter().zip(&self.rows[i].vals) {
                grad[p + c] += v;
            }
            if let Some(h) = hess.as_mut() {
                let var = st.variance();
                for a in 0..p {
                    for b in 0..=a {
                        h[(a, b)] -= x[a] * x[b] * var;
                    }
                    for c in 0..m {
                        h[(p + c, a)] -= x[a] * st.cov_yb[c];
                    }
                }
                let vb = st.var_b.as_ref().expect("requested");
                for c1 in 0..m {
                    for c2 in 0..=c1 {
                        h[(p + c1, p + c2)] -= vb[c1 * m + c2];
                    }
                }
            }
            if !value.is_finite() {
                return Err(SemfxError::Numeric { index: i, what: "log-likelihood term".into() });
            }
        }
        if let Some(h) = hess.as_mut() {
            for a in 0..d {
                for b in (a + 1)..d {
                    h[(a, b)] = h[(b, a)];
                }
            }
        }
        Ok(LikEval {
            value: value - self.log_jacobian(),
            value_internal: value,
            grad,
            hess,
            max_abs_index: max_index,
        })
    }
}

fn observation_error(e: SemfxError, index: usize) -> SemfxError {
    match e {
        SemfxError::Numeric { what, .. } => SemfxError::Numeric { index, what },
        SemfxError::InvalidInput(what) => SemfxError::Numeric { index, what },
        other => other,
    }
}

/// Log-likelihood, score and Hessian at internal-scale parameters.
///
/// The gradient stacks `Σ x_i (u_i − E*U)` and `Σ (B̃(u_i) − E*B̃)`; the
/// Hessian is minus the summed conditional covariance of `(x U, B̃(U))`.
pub fn loglik_grad_hess(
    data: &Dataset,
    model: &TiltModel,
    beta: &[f64],
    gamma: &[f64],
) -> Result<LikEval> {
    if beta.len() != data.p() || gamma.len() != model.free_dim() {
        return Err(SemfxError::InvalidInput("parameter dimensions do not match the data".into()));
    }
    Objective::new(data, model)?.evaluate(beta, gamma, true)
}

/// Spline model on the internal `[0, 1]` scale with quantile knots from the data.
pub fn build_spline_model(data: &Dataset, cfg: &FitConfig) -> Result<TiltModel> {
    let SupportDescriptor::Continuous { nodes, .. } = data.support() else {
        return Err(SemfxError::InvalidInput("spline model needs a continuous support".into()));
    };
    let u = data.response_internal();
    let count = cfg.interior_knots.unwrap_or_else(|| interior_knot_count(u.len()));
    let kv = KnotVector::with_interior_count(u, count, cfg.order, 0.0, 1.0)?;
    TiltModel::continuous(SplineBasis::new(kv), cfg.quad_nodes.unwrap_or(*nodes))
}

/// Fit the model; continuous supports use a cubic spline carrier, discrete ones dispatch to
/// [`fit_discrete`].
pub fn fit_mle(data: &Dataset, cfg: &FitConfig) -> Result<FittedModel> {
    validate_config(cfg)?;
    if data.support().is_discrete() {
        return fit_discrete(data, cfg);
    }
    let model = build_spline_model(data, cfg)?;
    fit_with_model(data, model, cfg)
}

/// Discrete responses: one indicator per observed level, lowest level anchored.
pub fn fit_discrete(data: &Dataset, cfg: &FitConfig) -> Result<FittedModel> {
    validate_config(cfg)?;
    let SupportDescriptor::Discrete { levels } = data.support() else {
        return Err(SemfxError::InvalidInput("fit_discrete needs a discrete support".into()));
    };
    let observed: Vec<f64> =
        levels.iter().cloned().filter(|l| data.y().iter().any(|y| y == l)).collect();
    if observed.len() < 2 {
        return Err(SemfxError::Collapse);
    }
    let dropped: Vec<f64> =
        levels.iter().cloned().filter(|l| !observed.contains(l)).collect();
    if !dropped.is_empty() {
        warn!("response levels {dropped:?} never occur; their probabilities are fitted as zero");
    }
    let data = if dropped.is_empty() { data.clone() } else { data.with_levels(observed.clone())? };
    let model = TiltModel::discrete(observed)?;
    let mut fit = fit_with_model(&data, model, cfg)?;
    fit.dropped_levels = dropped;
    Ok(fit)
}

fn validate_config(cfg: &FitConfig) -> Result<()> {
    if !(cfg.tol > 0.0) || !(cfg.grad_tol > 0.0) || cfg.max_iter == 0 {
        return Err(SemfxError::Config("tolerances must be positive and max_iter >= 1".into()));
    }
    Ok(())
}

/// Damped Newton from `(0, 0)` (or `cfg.start`) for a given carrier model.
pub fn fit_with_model(data: &Dataset, model: TiltModel, cfg: &FitConfig) -> Result<FittedModel> {
    let p = data.p();
    let m = model.free_dim();
    let n = data.n();
    if n <= p + m {
        warn!("n = {n} does not exceed the parameter count {}; the fit may be rank deficient", p + m);
    }
    let obj = Objective::new(data, &model)?;
    let (mut beta, mut gamma) = match &cfg.start {
        Some((b, g)) if b.len() == p && g.len() == m => (b.clone(), g.clone()),
        Some(_) => return Err(SemfxError::Config("starting point has the wrong dimensions".into())),
        None => (vec![0.0; p], vec![0.0; m]),
    };
    let grad_limit = cfg.grad_tol * n as f64;
    let mut cur = obj.evaluate(&beta, &gamma, true)?;
    let mut rel_change = f64::INFINITY;
    let mut iterations = 0;

    loop {
        let grad_norm = cur.grad.amax();
        let neg_h = -cur.hess.clone().expect("hessian requested");
        let (step, _ridge) = solve_spd_with_ridge(&neg_h, &cur.grad)?;
        let decrement = cur.grad.dot(&step);
        let scale = cur.value_internal.abs().max(1.0);
        // A step that leaves the objective bit-identical means the remaining
        // decrement is below rounding.
        let stalled = iterations > 0 && rel_change == 0.0;
        let at_optimum = grad_norm <= grad_limit && (decrement <= 1e-15 * scale || stalled);
        if at_optimum && (rel_change < cfg.tol || iterations == 0) {
            break;
        }
        if iterations >= cfg.max_iter {
            return Err(SemfxError::NonConvergence {
                iterations,
                grad_norm,
                last_beta: beta.iter().map(|b| b / data.scale()).collect(),
                last_gamma: gamma,
            });
        }

        // Backtracking line search with the Armijo condition.
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let (nb, ng) = split_step(&beta, &gamma, &step, t);
            match obj.value(&nb, &ng) {
                Ok((v, _)) if v >= cur.value_internal + cfg.armijo * t * decrement => {
                    accepted = Some((nb, ng));
                    break;
                }
                _ => t *= 0.5,
            }
        }
        let Some((nb, ng)) = accepted else {
            // No representable ascent left: accept if the gradient test already holds.
            if grad_norm <= grad_limit {
                break;
            }
            return Err(SemfxError::NonConvergence {
                iterations,
                grad_norm,
                last_beta: beta.iter().map(|b| b / data.scale()).collect(),
                last_gamma: gamma,
            });
        };
        let next = obj.evaluate(&nb, &ng, true)?;
        rel_change = (next.value_internal - cur.value_internal).abs()
            / cur.value_internal.abs().max(f64::MIN_POSITIVE);
        beta = nb;
        gamma = ng;
        cur = next;
        iterations += 1;

        if cur.max_abs_index > cfg.max_linear_index {
            return Err(SemfxError::Divergence { max_index: cur.max_abs_index });
        }
        if model.is_discrete() && cur.value_internal > -1e-6 {
            // Essentially every observation is predicted with certainty: separation.
            return Err(SemfxError::Divergence { max_index: cur.max_abs_index });
        }
    }

    let grad_norm = cur.grad.amax();
    let support = match model.levels() {
        Some(levels) => SupportDescriptor::Discrete { levels: levels.to_vec() },
        None => data.support().clone(),
    };
    Ok(FittedModel {
        beta: beta.iter().map(|b| b / data.scale()).collect(),
        beta_internal: beta,
        gamma,
        loglik: cur.value,
        iterations,
        grad_norm,
        model,
        support,
        dropped_levels: Vec::new(),
        n,
        scale: data.scale(),
        lo: data.lo(),
    })
}

fn split_step(beta: &[f64], gamma: &[f64], step: &DVector<f64>, t: f64) -> (Vec<f64>, Vec<f64>) {
    let p = beta.len();
    let nb = beta.iter().enumerate().map(|(j, b)| b + t * step[j]).collect();
    let ng = gamma.iter().enumerate().map(|(c, g)| g + t * step[p + c]).collect();
    (nb, ng)
}

/// Score vector of the fitted model (internal scale), for diagnostics.
pub fn fitted_score(data: &Dataset, fit: &FittedModel) -> Result<DVector<f64>> {
    Ok(Objective::new(data, &fit.model)?
        .evaluate(&fit.beta_internal, &fit.gamma, false)?
        .grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn small_continuous(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.sample(StandardNormal), rng.random_range(-1.0..1.0)])
            .collect();
        let y = rows
            .iter()
            .map(|r| {
                let z: f64 = rng.sample(StandardNormal);
                (0.5 * r[0] - 0.3 * r[1] + z).clamp(-4.0, 4.0)
            })
            .collect();
        Dataset::from_rows(&rows, y, SupportDescriptor::continuous(-4.0, 4.0)).unwrap()
    }

    #[test]
    fn zero_parameters_give_uniform_baseline() {
        let data = small_continuous(30, 1);
        let model = build_spline_model(&data, &FitConfig::default()).unwrap();
        let ev = loglik_grad_hess(&data, &model, &[0.0, 0.0], &vec![0.0; model.free_dim()]).unwrap();
        assert!((ev.value + 30.0 * 8f64.ln()).abs() < 1e-10);
        assert!(ev.value_internal.abs() < 1e-10);
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let data = small_continuous(5, 2);
        let cfg = FitConfig { interior_knots: Some(2), ..Default::default() };
        let model = build_spline_model(&data, &cfg).unwrap();
        let m = model.free_dim();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let beta: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let gamma: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ev = loglik_grad_hess(&data, &model, &beta, &gamma).unwrap();
        let h = 1e-5;
        let theta: Vec<f64> = beta.iter().chain(&gamma).cloned().collect();
        let eval = |th: &[f64]| loglik_grad_hess(&data, &model, &th[..2], &th[2..]).unwrap();
        for k in 0..theta.len() {
            let mut up = theta.clone();
            up[k] += h;
            let mut dn = theta.clone();
            dn[k] -= h;
            let (eu, ed) = (eval(&up), eval(&dn));
            let fd = (eu.value - ed.value) / (2.0 * h);
            assert!((ev.grad[k] - fd).abs() <= 1e-6 * ev.grad[k].abs().max(1.0));
            for l in 0..theta.len() {
                let fdh = (eu.grad[l] - ed.grad[l]) / (2.0 * h);
                let a = ev.hess.as_ref().unwrap()[(l, k)];
                assert!((a - fdh).abs() <= 1e-4 * a.abs().max(1e-2));
            }
        }
    }

    #[test]
    fn hessian_is_negative_semidefinite() {
        let data = small_continuous(40, 3);
        let model = build_spline_model(&data, &FitConfig::default()).unwrap();
        let g: Vec<f64> = (0..model.free_dim()).map(|c| (c as f64 - 1.5) * 0.7).collect();
        let ev = loglik_grad_hess(&data, &model, &[0.3, -1.1], &g).unwrap();
        let h = ev.hess.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let v = DVector::from_fn(h.nrows(), |_, _| rng.random_range(-1.0..1.0));
            assert!(v.dot(&(&h * &v)) <= 1e-12);
        }
    }

    #[test]
    fn fit_converges_with_zero_score() {
        let data = small_continuous(400, 5);
        let fit = fit_mle(&data, &FitConfig::default()).unwrap();
        let score = fitted_score(&data, &fit).unwrap();
        assert!(score.amax() <= 1e-6 * data.n() as f64);
        assert!(fit.loglik.is_finite());
        assert_eq!(fit.model.basis().unwrap().expand(&fit.gamma)[0], 0.0);
    }

    #[test]
    fn single_level_collapses() {
        let rows = vec![vec![0.1], vec![0.4], vec![-0.2]];
        let data = Dataset::from_rows(&rows, vec![1.0, 1.0, 1.0], SupportDescriptor::discrete_range(2))
            .unwrap();
        assert!(matches!(fit_discrete(&data, &FitConfig::default()), Err(SemfxError::Collapse)));
    }

    #[test]
    fn unobserved_levels_are_dropped() {
        let rows: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 6.0 - 1.0]).collect();
        let y = vec![0.0, 1.0, 0.0, 3.0, 1.0, 0.0, 3.0, 1.0, 3.0, 0.0, 1.0, 3.0];
        let data = Dataset::from_rows(&rows, y, SupportDescriptor::discrete_range(3)).unwrap();
        let fit = fit_discrete(&data, &FitConfig::default()).unwrap();
        assert_eq!(fit.dropped_levels, vec![2.0]);
        assert_eq!(fit.free_dim(), 2);
    }

    #[test]
    fn separated_binary_data_diverges() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![if i < 10 { -0.2 - i as f64 * 0.2 } else { 0.2 + i as f64 * 0.2 }]).collect();
        let y = (0..20).map(|i| if i < 10 { 0.0 } else { 1.0 }).collect();
        let data = Dataset::from_rows(&rows, y, SupportDescriptor::discrete_range(1)).unwrap();
        let err = fit_discrete(&data, &FitConfig::default()).unwrap_err();
        assert!(matches!(err, SemfxError::Divergence { .. }), "{err:?}");
    }

    #[test]
    fn response_outside_support_rejected() {
        let rows = vec![vec![0.0], vec![1.0]];
        assert!(Dataset::from_rows(&rows, vec![0.5, 3.0], SupportDescriptor::continuous(0.0, 1.0)).is_err());
        assert!(Dataset::from_rows(&rows, vec![0.5, 1.0], SupportDescriptor::discrete_range(1)).is_err());
    }

    #[test]
    fn iteration_cap_reports_last_iterate() {
        let data = small_continuous(200, 6);
        let cfg = FitConfig { max_iter: 1, ..Default::default() };
        match fit_mle(&data, &cfg) {
            Err(SemfxError::NonConvergence { last_beta, .. }) => assert_eq!(last_beta.len(), 2),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }
}
