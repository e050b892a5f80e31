//! The exponential-tilt conditional law `f(y | ν) ∝ exp{yν + c(y)}` with
//! `c(y) = B̃(y)ᵀγ`, where `ν = βᵀx` and `B̃` is the anchor-dropped basis.
//!
//! Continuous supports are integrated with a composite Gauss–Legendre grid;
//! discrete supports are finite sums over the levels. Every expectation is a
//! weighted sum over the same evaluation points, so the normalizer, moments
//! and score pieces are mutually consistent to rounding.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SemfxError};
use crate::quadrature::QuadratureGrid;
use crate::spline::SplineBasis;

pub const DEFAULT_QUAD_NODES: usize = 201;

/// Largest CDF mismatch accepted from the quantile solver.
pub const QUANTILE_TOL: f64 = 1e-10;

/// Densities below this make `1/f(q)` meaningless.
pub const MIN_QUANTILE_DENSITY: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SupportDescriptor {
    Continuous { lo: f64, hi: f64, nodes: usize },
    Discrete { levels: Vec<f64> },
}

impl SupportDescriptor {
    pub fn continuous(lo: f64, hi: f64) -> Self {
        SupportDescriptor::Continuous { lo, hi, nodes: DEFAULT_QUAD_NODES }
    }

    /// Integer levels `0, 1, …, m_levels`.
    pub fn discrete_range(m_levels: usize) -> Self {
        SupportDescriptor::Discrete { levels: (0..=m_levels).map(|v| v as f64).collect() }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, SupportDescriptor::Discrete { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SupportDescriptor::Continuous { lo, hi, nodes } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(SemfxError::InvalidInput(format!(
                        "continuous support needs finite lo < hi, got [{lo}, {hi}]"
                    )));
                }
                if *nodes < 2 {
                    return Err(SemfxError::Config("quadrature needs at least 2 nodes".into()));
                }
            }
            SupportDescriptor::Discrete { levels } => {
                if levels.len() < 2 {
                    return Err(SemfxError::InvalidInput(
                        "discrete support needs at least two levels".into(),
                    ));
                }
                if levels.iter().any(|v| !v.is_finite()) || levels.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(SemfxError::InvalidInput(
                        "discrete levels must be finite and strictly increasing".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, y: f64) -> bool {
        match self {
            SupportDescriptor::Continuous { lo, hi, .. } => y >= *lo && y <= *hi,
            SupportDescriptor::Discrete { levels } => levels.iter().any(|&l| l == y),
        }
    }
}

/// Conditional summaries of `Y` (and of `B̃(Y)`) at one linear index `ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalState {
    pub nu: f64,
    pub log_z: f64,
    pub mean: f64,
    /// Central moments of order 2, 3, 4.
    pub central: [f64; 3],
    pub mean_b: Vec<f64>,
    /// `cov(Y, B̃(Y))`
    pub cov_yb: Vec<f64>,
    /// `E[(Y − EY)² (B̃(Y) − E B̃(Y))]`
    pub cov_y2b: Vec<f64>,
    /// `var(B̃(Y))`, row-major, when requested.
    pub var_b: Option<Vec<f64>>,
}

impl ConditionalState {
    pub fn variance(&self) -> f64 {
        self.central[0]
    }

    pub fn third_central(&self) -> f64 {
        self.central[1]
    }

    /// Raw moment `E(Y^k)` for `k = 1..=4`.
    pub fn raw_moment(&self, k: usize) -> f64 {
        let m = self.mean;
        let [c2, c3, c4] = self.central;
        match k {
            1 => m,
            2 => c2 + m * m,
            3 => c3 + 3.0 * m * c2 + m.powi(3),
            4 => c4 + 4.0 * m * c3 + 6.0 * m * m * c2 + m.powi(4),
            _ => panic!("raw moments are tracked up to order 4"),
        }
    }
}

/// Conditional quantile at level `τ` with its derivatives in `ν` and `γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileLocal {
    pub tau: f64,
    pub q: f64,
    pub density: f64,
    /// `dq/dν = E[(τ − 1{Y<q}) Y] / f(q)`
    pub qprime: f64,
    /// `d²q/dν²`
    pub qdprime: f64,
    /// `c'(q) = B̃'(q)ᵀγ`
    pub carrier_slope: f64,
    pub dq_dgamma: Vec<f64>,
    pub dqprime_dgamma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    Continuous { basis: SplineBasis, grid: QuadratureGrid },
    Discrete { levels: Vec<f64> },
}

/// Evaluation points, weights and anchor-dropped basis rows for one support.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltModel {
    kind: Kind,
    points: Vec<f64>,
    log_weights: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    free_dim: usize,
}

/// Sparse anchor-dropped basis row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRow {
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl SparseRow {
    pub fn dot(&self, gamma: &[f64]) -> f64 {
        self.cols.iter().zip(&self.vals).map(|(&c, &v)| v * gamma[c]).sum()
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (&c, &v) in self.cols.iter().zip(&self.vals) {
            out[c] += v;
        }
        out
    }
}

impl TiltModel {
    /// Spline carrier on the basis support, integrated with about `nodes` Gauss–Legendre nodes.
    pub fn continuous(basis: SplineBasis, nodes: usize) -> Result<Self> {
        let grid = QuadratureGrid::composite(&basis.knots().breakpoints(), nodes)?;
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut buf = [0.0f64; 32];
        for &t in grid.nodes() {
            let first = basis.eval_nonzero_into(t, &mut buf)?;
            for (k, &v) in buf[..basis.order()].iter().enumerate() {
                if v != 0.0 {
                    if let Some(c) = basis.free_index(first + k) {
                        cols.push(c);
                        vals.push(v);
                    }
                }
            }
            row_ptr.push(cols.len());
        }
        let points = grid.nodes().to_vec();
        let log_weights = grid.weights().iter().map(|w| w.ln()).collect();
        let free_dim = basis.free_len();
        Ok(TiltModel {
            kind: Kind::Continuous { basis, grid },
            points,
            log_weights,
            row_ptr,
            cols,
            vals,
            free_dim,
        })
    }

    /// Indicator carrier on finite levels; the lowest level is the anchor.
    pub fn discrete(levels: Vec<f64>) -> Result<Self> {
        SupportDescriptor::Discrete { levels: levels.clone() }.validate()?;
        let mut row_ptr = vec![0];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for j in 0..levels.len() {
            if j > 0 {
                cols.push(j - 1);
                vals.push(1.0);
            }
            row_ptr.push(cols.len());
        }
        let free_dim = levels.len() - 1;
        Ok(TiltModel {
            points: levels.clone(),
            log_weights: vec![0.0; levels.len()],
            kind: Kind::Discrete { levels },
            row_ptr,
            cols,
            vals,
            free_dim,
        })
    }

    pub fn free_dim(&self) -> usize {
        self.free_dim
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.kind, Kind::Discrete { .. })
    }

    pub fn basis(&self) -> Option<&SplineBasis> {
        match &self.kind {
            Kind::Continuous { basis, .. } => Some(basis),
            Kind::Discrete { .. } => None,
        }
    }

    pub fn levels(&self) -> Option<&[f64]> {
        match &self.kind {
            Kind::Discrete { levels } => Some(levels),
            Kind::Continuous { .. } => None,
        }
    }

    pub fn grid(&self) -> Option<&QuadratureGrid> {
        match &self.kind {
            Kind::Continuous { grid, .. } => Some(grid),
            Kind::Discrete { .. } => None,
        }
    }

    /// Smallest and largest support point.
    pub fn bounds(&self) -> (f64, f64) {
        match &self.kind {
            Kind::Continuous { basis, .. } => (basis.lo(), basis.hi()),
            Kind::Discrete { levels } => (levels[0], *levels.last().unwrap()),
        }
    }

    /// Evaluation points (quadrature nodes or levels).
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    fn row(&self, j: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[j], self.row_ptr[j + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    /// `B̃(y)` at an arbitrary support point.
    pub fn basis_row(&self, y: f64) -> Result<SparseRow> {
        match &self.kind {
            Kind::Continuous { basis, .. } => {
                let mut buf = [0.0f64; 32];
                let first = basis.eval_nonzero_into(y, &mut buf)?;
                let mut row = SparseRow::default();
                for (k, &v) in buf[..basis.order()].iter().enumerate() {
                    if let Some(c) = basis.free_index(first + k) {
                        if v != 0.0 {
                            row.cols.push(c);
                            row.vals.push(v);
                        }
                    }
                }
                Ok(row)
            }
            Kind::Discrete { levels } => {
                let j = level_index(levels, y).ok_or_else(|| {
                    SemfxError::InvalidInput(format!("{y} is not a level of the discrete support"))
                })?;
                Ok(if j == 0 {
                    SparseRow::default()
                } else {
                    SparseRow { cols: vec![j - 1], vals: vec![1.0] }
                })
            }
        }
    }

    /// Carrier `c(y) = B̃(y)ᵀγ`.
    pub fn carrier(&self, gamma: &[f64], y: f64) -> Result<f64> {
        match &self.kind {
            Kind::Continuous { basis, .. } => basis.curve(gamma, y),
            Kind::Discrete { .. } => Ok(self.basis_row(y)?.dot(gamma)),
        }
    }

    /// Carrier slope `c'(y) = B̃'(y)ᵀγ`, continuous supports only.
    pub fn carrier_deriv(&self, gamma: &[f64], y: f64) -> Result<f64> {
        match &self.kind {
            Kind::Continuous { basis, .. } => basis.curve_deriv(gamma, y),
            Kind::Discrete { .. } => {
                Err(SemfxError::Unsupported("carrier derivative on a discrete support".into()))
            }
        }
    }

    fn check_inputs(&self, nu: f64, gamma: &[f64]) -> Result<()> {
        if gamma.len() != self.free_dim {
            return Err(SemfxError::InvalidInput(format!(
                "gamma has length {}, expected {}",
                gamma.len(),
                self.free_dim
            )));
        }
        if !nu.is_finite() || gamma.iter().any(|g| !g.is_finite()) {
            return Err(SemfxError::InvalidInput("non-finite linear index or carrier coefficients".into()));
        }
        Ok(())
    }

    /// Log normalizer and normalized point masses `p_j` (weights included).
    pub fn probabilities(&self, nu: f64, gamma: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.check_inputs(nu, gamma)?;
        let mut logs: Vec<f64> = (0..self.points.len())
            .map(|j| {
                let (c, v) = self.row(j);
                let carrier: f64 = c.iter().zip(v).map(|(&c, &v)| v * gamma[c]).sum();
                self.points[j] * nu + carrier + self.log_weights[j]
            })
            .collect();
        let shift = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in logs.iter_mut() {
            *l = (*l - shift).exp();
            total += *l;
        }
        let log_z = shift + total.ln();
        if !log_z.is_finite() {
            return Err(SemfxError::Numeric { index: 0, what: "log normalizer".into() });
        }
        for l in logs.iter_mut() {
            *l /= total;
        }
        Ok((log_z, logs))
    }

    /// `log ∫ exp{yν + B̃(y)ᵀγ} dμ(y)`
    pub fn log_normalizer(&self, nu: f64, gamma: &[f64]) -> Result<f64> {
        Ok(self.probabilities(nu, gamma)?.0)
    }

    /// Density (continuous) or mass (discrete) at `y`.
    pub fn density(&self, nu: f64, gamma: &[f64], log_z: f64, y: f64) -> Result<f64> {
        Ok((y * nu + self.carrier(gamma, y)? - log_z).exp())
    }

    pub fn conditional(&self, nu: f64, gamma: &[f64], with_var_b: bool) -> Result<ConditionalState> {
        let (log_z, p) = self.probabilities(nu, gamma)?;
        let m = self.free_dim;
        let mean: f64 = p.iter().zip(&self.points).map(|(p, y)| p * y).sum();
        let mut central = [0.0; 3];
        let mut mean_b = vec![0.0; m];
        let mut cov_yb = vec![0.0; m];
        let mut cov_y2b = vec![0.0; m];
        let mut var_b = if with_var_b { Some(vec![0.0; m * m]) } else { None };
        for (j, (&pj, &y)) in p.iter().zip(&self.points).enumerate() {
            let d = y - mean;
            let d2 = d * d;
            central[0] += pj * d2;
            central[1] += pj * d2 * d;
            central[2] += pj * d2 * d2;
            let (cols, vals) = self.row(j);
            for (&c, &v) in cols.iter().zip(vals) {
                let pv = pj * v;
                mean_b[c] += pv;
                cov_yb[c] += pv * d;
                cov_y2b[c] += pv * d2;
            }
            if let Some(bb) = var_b.as_mut() {
                for (&c1, &v1) in cols.iter().zip(vals) {
                    let pv = pj * v1;
                    for (&c2, &v2) in cols.iter().zip(vals) {
                        bb[c1 * m + c2] += pv * v2;
                    }
                }
            }
        }
        for c in 0..m {
            cov_y2b[c] -= central[0] * mean_b[c];
        }
        if let Some(bb) = var_b.as_mut() {
            for a in 0..m {
                for b in 0..m {
                    bb[a * m + b] -= mean_b[a] * mean_b[b];
                }
            }
        }
        Ok(ConditionalState { nu, log_z, mean, central, mean_b, cov_yb, cov_y2b, var_b })
    }

    /// `P(Y ≤ y | ν)`.
    pub fn cdf(&self, nu: f64, gamma: &[f64], y: f64) -> Result<f64> {
        let (log_z, p) = self.probabilities(nu, gamma)?;
        match &self.kind {
            Kind::Discrete { levels } => {
                Ok(levels.iter().zip(&p).filter(|(l, _)| **l <= y).map(|(_, p)| p).sum())
            }
            Kind::Continuous { basis, grid } => {
                let (lo, hi) = (basis.lo(), basis.hi());
                if y <= lo {
                    return Ok(0.0);
                }
                if y >= hi {
                    return Ok(1.0);
                }
                let mut acc = 0.0;
                for panel in grid.panels() {
                    if panel.hi <= y {
                        acc += p[panel.start..panel.end].iter().sum::<f64>();
                    } else {
                        acc += self.partial_mass(nu, gamma, log_z, panel.lo, y)?;
                        break;
                    }
                }
                Ok(acc)
            }
        }
    }

    /// `∫_a^b f(u) du` with the panel rule.
    fn partial_mass(&self, nu: f64, gamma: &[f64], log_z: f64, a: f64, b: f64) -> Result<f64> {
        let Kind::Continuous { basis, grid } = &self.kind else { unreachable!() };
        let mut acc = 0.0;
        for (u, w) in grid.rule().mapped(a, b) {
            acc += w * (u * nu + basis.curve(gamma, u)? - log_z).exp();
        }
        Ok(acc)
    }

    /// Conditional `τ`-quantile with `q'`, `q''` and their `γ`-gradients.
    pub fn quantile(&self, nu: f64, gamma: &[f64], tau: f64) -> Result<QuantileLocal> {
        let Kind::Continuous { basis, grid } = &self.kind else {
            return Err(SemfxError::Unsupported(
                "quantiles are not defined for discrete responses".into(),
            ));
        };
        if !(tau > 0.0 && tau < 1.0) {
            return Err(SemfxError::InvalidInput(format!("tau must lie in (0, 1), got {tau}")));
        }
        let (log_z, p) = self.probabilities(nu, gamma)?;
        let panels = grid.panels();

        // Locate the panel holding the quantile.
        let mut below = 0.0;
        let mut k = 0;
        while k + 1 < panels.len() {
            let mass: f64 = p[panels[k].start..panels[k].end].iter().sum();
            if below + mass >= tau {
                break;
            }
            below += mass;
            k += 1;
        }
        let panel = panels[k];
        let dens = |u: f64| -> Result<f64> { Ok((u * nu + basis.curve(gamma, u)? - log_z).exp()) };

        // Safeguarded Newton on below + ∫_a^q f = τ.
        let panel_mass: f64 = p[panel.start..panel.end].iter().sum();
        let (mut lo, mut hi) = (panel.lo, panel.hi);
        let mut q = if panel_mass > 0.0 {
            panel.lo + ((tau - below) / panel_mass).clamp(0.0, 1.0) * (panel.hi - panel.lo)
        } else {
            0.5 * (panel.lo + panel.hi)
        };
        let mut mismatch = f64::INFINITY;
        for _ in 0..200 {
            mismatch = below + self.partial_mass(nu, gamma, log_z, panel.lo, q)? - tau;
            if mismatch.abs() <= 1e-14 {
                break;
            }
            if mismatch > 0.0 {
                hi = q;
            } else {
                lo = q;
            }
            if hi - lo <= 4.0 * f64::EPSILON * (1.0 + q.abs()) {
                break;
            }
            let f = dens(q)?;
            let step = q - mismatch / f;
            q = if f > 0.0 && step > lo && step < hi { step } else { 0.5 * (lo + hi) };
        }
        if mismatch.abs() > QUANTILE_TOL {
            return Err(SemfxError::Numeric {
                index: 0,
                what: format!("quantile solver stalled with CDF mismatch {mismatch:.3e}"),
            });
        }

        let m = self.free_dim;
        // Expectations over the whole support, and the same integrals truncated at q.
        let mut e_y = 0.0;
        let mut e_y2 = 0.0;
        let mut e_b = vec![0.0; m];
        let mut e_yb = vec![0.0; m];
        let mut i_y = 0.0;
        let mut i_y2 = 0.0;
        let mut i_b = vec![0.0; m];
        let mut i_yb = vec![0.0; m];
        for (j, (&pj, &y)) in p.iter().zip(&self.points).enumerate() {
            let (cols, vals) = self.row(j);
            let inside = j < panel.start;
            e_y += pj * y;
            e_y2 += pj * y * y;
            if inside {
                i_y += pj * y;
                i_y2 += pj * y * y;
            }
            for (&c, &v) in cols.iter().zip(vals) {
                e_b[c] += pj * v;
                e_yb[c] += pj * y * v;
                if inside {
                    i_b[c] += pj * v;
                    i_yb[c] += pj * y * v;
                }
            }
        }
        let mut buf = [0.0f64; 32];
        for (u, w) in grid.rule().mapped(panel.lo, q) {
            let first = basis.eval_nonzero_into(u, &mut buf)?;
            let carrier = basis.dot_free(first, &buf[..basis.order()], gamma);
            let fw = w * (u * nu + carrier - log_z).exp();
            i_y += fw * u;
            i_y2 += fw * u * u;
            for (k, &v) in buf[..basis.order()].iter().enumerate() {
                if let Some(c) = basis.free_index(first + k) {
                    i_b[c] += fw * v;
                    i_yb[c] += fw * u * v;
                }
            }
        }

        let density = dens(q)?;
        if !(density > MIN_QUANTILE_DENSITY) {
            return Err(SemfxError::IllConditionedQuantile { density });
        }
        let slope = basis.curve_deriv(gamma, q)?;
        let qprime = (tau * e_y - i_y) / density;
        let qdprime = (tau * e_y2 - i_y2) / density - 2.0 * q * qprime - qprime * qprime * (nu + slope);
        let b_q = self.basis_row(q)?.to_dense(m);
        let bracket = q + qprime * nu + qprime * slope;
        let dq_dgamma: Vec<f64> = (0..m).map(|c| (tau * e_b[c] - i_b[c]) / density).collect();
        let dqprime_dgamma = (0..m)
            .map(|c| (tau * e_yb[c] - i_yb[c]) / density - qprime * b_q[c] - dq_dgamma[c] * bracket)
            .collect();
        Ok(QuantileLocal {
            tau,
            q,
            density,
            qprime,
            qdprime,
            carrier_slope: slope,
            dq_dgamma,
            dqprime_dgamma,
        })
    }
}

fn level_index(levels: &[f64], y: f64) -> Option<usize> {
    levels.iter().position(|&l| l == y)
}

/// `βᵀx`
pub fn linear_index(x: &[f64], beta: &[f64]) -> f64 {
    x.iter().zip(beta).map(|(a, b)| a * b).sum()
}
