//! Clamped B-spline bases on a bounded interval.
//!
//! Knots are placed at empirical quantiles of the response with
//! `N = ⌈0.7·n^{1/5}⌉` interior knots. Evaluation uses the Cox–de Boor
//! triangle restricted to the `r` functions that are nonzero on a span.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SemfxError};

/// Relative slack allowed when a point lands just outside `[lo, hi]` through rounding.
const DOMAIN_SLACK: f64 = 1e-12;

/// Relative inward nudge applied to tied or boundary-colliding knots.
const KNOT_NUDGE: f64 = 1e-9;

/// Number of interior knots for a sample of size `n`: `⌈0.7·n^{1/5}⌉`.
pub fn interior_knot_count(n: usize) -> usize {
    (0.7 * (n as f64).powf(0.2)).ceil() as usize
}

/// Linear-interpolation sample quantile (type 7) of an already sorted slice.
pub fn quantile_sorted(sorted: &[f64], level: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * level.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    interior: Vec<f64>,
    lo: f64,
    hi: f64,
    order: usize,
    /// Full clamped sequence: `lo` repeated `order` times, interior, `hi` repeated `order` times.
    full: Vec<f64>,
}

impl KnotVector {
    pub fn new(interior: Vec<f64>, lo: f64, hi: f64, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(SemfxError::InvalidInput("spline order must be >= 1".into()));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(SemfxError::InvalidInput(format!(
                "support endpoints must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        let mut prev = lo;
        for &k in &interior {
            if !(k > prev && k < hi) {
                return Err(SemfxError::InvalidInput(format!(
                    "interior knots must be strictly increasing inside ({lo}, {hi})"
                )));
            }
            prev = k;
        }
        let mut kv = KnotVector { interior, lo, hi, order, full: Vec::new() };
        kv.rebuild_full();
        Ok(kv)
    }

    /// Interior knots at the response quantiles of levels `k/(N+1)`, `N = ⌈0.7 n^{1/5}⌉`.
    pub fn from_quantiles(y: &[f64], order: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::with_interior_count(y, interior_knot_count(y.len()), order, lo, hi)
    }

    /// Same placement rule with an explicit interior knot count.
    pub fn with_interior_count(
        y: &[f64],
        count: usize,
        order: usize,
        lo: f64,
        hi: f64,
    ) -> Result<Self> {
        if y.len() < 2 {
            return Err(SemfxError::InvalidInput("knot placement needs n >= 2".into()));
        }
        if !(lo < hi) {
            return Err(SemfxError::InvalidInput(format!("need lo < hi, got [{lo}, {hi}]")));
        }
        if let Some(bad) = y.iter().find(|v| !v.is_finite() || **v < lo || **v > hi) {
            return Err(SemfxError::InvalidInput(format!(
                "response value {bad} lies outside the support [{lo}, {hi}]"
            )));
        }
        let mut sorted = y.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        let mut distinct = sorted.clone();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(SemfxError::DegenerateKnots { needed: 2, found: distinct.len() });
        }

        let mut knots: Vec<f64> = (1..=count)
            .map(|k| quantile_sorted(&sorted, k as f64 / (count + 1) as f64))
            .collect();

        let delta = KNOT_NUDGE * (hi - lo);
        let floor = lo + delta;
        let ceil = hi - delta;
        for k in knots.iter_mut() {
            *k = k.clamp(floor, ceil);
        }
        for i in 1..knots.len() {
            if knots[i] <= knots[i - 1] {
                knots[i] = knots[i - 1] + delta;
            }
        }
        // Forward nudging can push the top knots past `hi - delta`; pull them back.
        if let Some(last) = knots.last_mut() {
            *last = last.min(ceil);
        }
        for i in (0..knots.len().saturating_sub(1)).rev() {
            if knots[i] >= knots[i + 1] {
                knots[i] = knots[i + 1] - delta;
            }
        }
        Self::new(knots, lo, hi, order)
    }

    fn rebuild_full(&mut self) {
        let mut full = Vec::with_capacity(self.interior.len() + 2 * self.order);
        full.extend(std::iter::repeat_n(self.lo, self.order));
        full.extend_from_slice(&self.interior);
        full.extend(std::iter::repeat_n(self.hi, self.order));
        self.full = full;
    }

    pub fn interior(&self) -> &[f64] {
        &self.interior
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Number of basis functions `m = N + r`.
    pub fn basis_count(&self) -> usize {
        self.interior.len() + self.order
    }

    /// Distinct breakpoints `lo, interior..., hi`.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut b = Vec::with_capacity(self.interior.len() + 2);
        b.push(self.lo);
        b.extend_from_slice(&self.interior);
        b.push(self.hi);
        b
    }

    pub fn full(&self) -> &[f64] {
        &self.full
    }

    /// Same knots mapped affinely onto `[new_lo, new_hi]`.
    pub fn rescaled(&self, new_lo: f64, new_hi: f64) -> Result<Self> {
        let s = (new_hi - new_lo) / (self.hi - self.lo);
        let interior = self.interior.iter().map(|k| new_lo + (k - self.lo) * s).collect();
        Self::new(interior, new_lo, new_hi, self.order)
    }
}

/// Clamped B-spline basis with one coefficient pinned to zero for identifiability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    knots: KnotVector,
    anchor: usize,
}

impl SplineBasis {
    /// Basis anchored at the first coefficient, which pins `c(lo) = 0`.
    pub fn new(knots: KnotVector) -> Self {
        Self::with_anchor(knots, 0)
    }

    pub fn with_anchor(knots: KnotVector, anchor: usize) -> Self {
        assert!(anchor < knots.basis_count(), "anchor index out of range");
        SplineBasis { knots, anchor }
    }

    pub fn knots(&self) -> &KnotVector {
        &self.knots
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn order(&self) -> usize {
        self.knots.order
    }

    pub fn len(&self) -> usize {
        self.knots.basis_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lo(&self) -> f64 {
        self.knots.lo
    }

    pub fn hi(&self) -> f64 {
        self.knots.hi
    }

    fn check_domain(&self, t: f64) -> Result<f64> {
        let (lo, hi) = (self.knots.lo, self.knots.hi);
        let slack = DOMAIN_SLACK * (hi - lo);
        if !t.is_finite() || t < lo - slack || t > hi + slack {
            return Err(SemfxError::OutOfDomain { t, lo, hi });
        }
        Ok(t.clamp(lo, hi))
    }

    /// Knot span index `i` with `t_i <= t < t_{i+1}`; the right endpoint maps to the last span.
    fn span(&self, t: f64) -> usize {
        let full = self.knots.full();
        let r = self.knots.order;
        let m = self.len();
        if t >= full[m] {
            return m - 1;
        }
        // First index in [r-1, m) whose knot exceeds t, minus one.
        let slice = &full[r - 1..=m];
        let pos = slice.partition_point(|&k| k <= t);
        (r - 1 + pos - 1).clamp(r - 1, m - 1)
    }

    /// Cox–de Boor triangle: writes the `degree + 1` nonzero values of the
    /// degree-`degree` basis at span `i` into `out`.
    fn nonzero_of_degree(&self, i: usize, t: f64, degree: usize, out: &mut [f64]) {
        let full = self.knots.full();
        let mut left = [0.0f64; 32];
        let mut right = [0.0f64; 32];
        out[0] = 1.0;
        for j in 1..=degree {
            left[j] = t - full[i + 1 - j];
            right[j] = full[i + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { out[r] / denom } else { 0.0 };
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }

    /// Nonzero basis values at `t`: returns the index of the first nonzero
    /// function and fills `out[..order]`.
    pub fn eval_nonzero_into(&self, t: f64, out: &mut [f64]) -> Result<usize> {
        let t = self.check_domain(t)?;
        let r = self.order();
        assert!(r <= 32, "spline order above 32 is not supported");
        let i = self.span(t);
        self.nonzero_of_degree(i, t, r - 1, &mut out[..r]);
        Ok(i + 1 - r)
    }

    /// Derivatives of the nonzero basis functions at `t`, same layout as
    /// [`eval_nonzero_into`](Self::eval_nonzero_into).
    pub fn deriv_nonzero_into(&self, t: f64, out: &mut [f64]) -> Result<usize> {
        let r = self.order();
        if r < 2 {
            return Err(SemfxError::UnsupportedOrder(r));
        }
        let t = self.check_domain(t)?;
        let i = self.span(t);
        let d = r - 1;
        let full = self.knots.full();
        let mut lower = [0.0f64; 32];
        self.nonzero_of_degree(i, t, d - 1, &mut lower[..d]);
        let first = i - d;
        for k in 0..=d {
            let j = first + k;
            let a = if k >= 1 {
                let den = full[j + d] - full[j];
                if den > 0.0 {
                    lower[k - 1] / den
                } else {
                    0.0
                }
            } else {
                0.0
            };
            let b = if k < d {
                let den = full[j + d + 1] - full[j + 1];
                if den > 0.0 {
                    lower[k] / den
                } else {
                    0.0
                }
            } else {
                0.0
            };
            out[k] = d as f64 * (a - b);
        }
        Ok(first)
    }

    /// All `m` basis values at `t`.
    pub fn eval_basis(&self, t: f64) -> Result<Vec<f64>> {
        let mut vals = [0.0f64; 32];
        let first = self.eval_nonzero_into(t, &mut vals)?;
        let mut out = vec![0.0; self.len()];
        out[first..first + self.order()].copy_from_slice(&vals[..self.order()]);
        Ok(out)
    }

    /// All `m` basis derivatives at `t`.
    pub fn eval_deriv(&self, t: f64) -> Result<Vec<f64>> {
        let mut vals = [0.0f64; 32];
        let first = self.deriv_nonzero_into(t, &mut vals)?;
        let mut out = vec![0.0; self.len()];
        out[first..first + self.order()].copy_from_slice(&vals[..self.order()]);
        Ok(out)
    }

    /// Number of free coefficients (all but the anchor).
    pub fn free_len(&self) -> usize {
        self.len() - 1
    }

    /// Position of basis function `j` in the free coefficient vector, `None` for the anchor.
    pub fn free_index(&self, j: usize) -> Option<usize> {
        use std::cmp::Ordering::*;
        match j.cmp(&self.anchor) {
            Less => Some(j),
            Equal => None,
            Greater => Some(j - 1),
        }
    }

    /// Expand free coefficients into the full `m`-vector with a zero at the anchor.
    pub fn expand(&self, free: &[f64]) -> Vec<f64> {
        let mut full = Vec::with_capacity(self.len());
        full.extend_from_slice(&free[..self.anchor]);
        full.push(0.0);
        full.extend_from_slice(&free[self.anchor..]);
        full
    }

    /// Anchor-dropped basis vector at `t`.
    pub fn eval_free(&self, t: f64) -> Result<Vec<f64>> {
        let mut b = self.eval_basis(t)?;
        b.remove(self.anchor);
        Ok(b)
    }

    /// `B(t)ᵀγ` for free coefficients `gamma`.
    pub fn curve(&self, gamma: &[f64], t: f64) -> Result<f64> {
        let mut vals = [0.0f64; 32];
        let first = self.eval_nonzero_into(t, &mut vals)?;
        Ok(self.dot_free(first, &vals[..self.order()], gamma))
    }

    /// `B'(t)ᵀγ` for free coefficients `gamma`.
    pub fn curve_deriv(&self, gamma: &[f64], t: f64) -> Result<f64> {
        let mut vals = [0.0f64; 32];
        let first = self.deriv_nonzero_into(t, &mut vals)?;
        Ok(self.dot_free(first, &vals[..self.order()], gamma))
    }

    /// Dot product of a nonzero block (starting at basis index `first`) with free coefficients.
    pub fn dot_free(&self, first: usize, vals: &[f64], gamma: &[f64]) -> f64 {
        vals.iter()
            .enumerate()
            .filter_map(|(k, v)| self.free_index(first + k).map(|f| v * gamma[f]))
            .sum()
    }
}
