//! Composite Gauss–Legendre rules.
//!
//! The tilted integrand `exp{yη + B(y)ᵀγ}` is analytic inside each knot span
//! but only `C^{r-2}` across knots, so the grid is built panel by panel with
//! panel edges on the spline breakpoints.

use gauss_quad::legendre::GaussLegendre;

use crate::error::{Result, SemfxError};

/// Minimum number of panels in a composite grid; knot spans are subdivided to reach it.
pub const MIN_PANELS: usize = 12;

/// Gauss–Legendre rule on the reference interval `[-1, 1]`, nodes ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussRule {
    pub fn new(degree: usize) -> Result<Self> {
        let degree = degree.max(2);
        let rule = GaussLegendre::new(
            degree
                .try_into()
                .map_err(|_| SemfxError::Config("quadrature degree must be >= 2".into()))?,
        );
        let mut pairs = rule.into_node_weight_pairs().to_vec();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        Ok(GaussRule { nodes, weights })
    }

    pub fn degree(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes.iter().zip(&self.weights).map(move |(x, w)| (mid + half * x, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Panel {
    pub lo: f64,
    pub hi: f64,
    /// Range of node indices belonging to this panel.
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    panels: Vec<Panel>,
    rule: GaussRule,
}

impl QuadratureGrid {
    /// Composite rule with panel edges on `breakpoints` and about `total_nodes` nodes overall.
    pub fn composite(breakpoints: &[f64], total_nodes: usize) -> Result<Self> {
        if breakpoints.len() < 2 || breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(SemfxError::Config(
                "quadrature breakpoints must be strictly increasing with at least two entries".into(),
            ));
        }
        if total_nodes < 2 {
            return Err(SemfxError::Config("quadrature needs at least 2 nodes".into()));
        }
        let spans = breakpoints.len() - 1;
        let sub = MIN_PANELS.div_ceil(spans);
        let per_panel = total_nodes.div_ceil(spans * sub).max(2);
        let rule = GaussRule::new(per_panel)?;

        let mut nodes = Vec::with_capacity(spans * sub * per_panel);
        let mut weights = Vec::with_capacity(nodes.capacity());
        let mut panels = Vec::with_capacity(spans * sub);
        for w in breakpoints.windows(2) {
            let h = (w[1] - w[0]) / sub as f64;
            for k in 0..sub {
                let a = w[0] + h * k as f64;
                let b = if k + 1 == sub { w[1] } else { a + h };
                let start = nodes.len();
                for (x, wt) in rule.mapped(a, b) {
                    nodes.push(x);
                    weights.push(wt);
                }
                panels.push(Panel { lo: a, hi: b, start, end: nodes.len() });
            }
        }
        Ok(QuadratureGrid { nodes, weights, panels, rule })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn panels(&self) -> &[Panel] {
        &self.panels
    }

    /// The per-panel reference rule, reused for partial-panel integrals.
    pub fn rule(&self) -> &GaussRule {
        &self.rule
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}
