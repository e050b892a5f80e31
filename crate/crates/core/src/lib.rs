//! Semiparametric exponential-tilt regression.
//!
//! The conditional density of a response `Y` given covariates `x` is modelled as
//!
//! ```text
//! f(y | x) = exp{ y·βᵀx + c(y) } / ∫ exp{ t·βᵀx + c(t) } dμ(t)
//! ```
//!
//! with the carrier function `c` left unspecified. `c` is approximated by a
//! clamped B-spline `B(y)ᵀγ` (continuous responses) or by level indicators
//! (discrete responses), and `(β, γ)` is found by maximizing the resulting
//! concave log-likelihood. On top of the fit the crate estimates the marginal
//! effect `ξ = β·E{var(Y|βᵀX)}` and the quantile effect
//! `η_τ = β·E{Q'_τ(Y|βᵀX)}`, with plug-in asymptotic variances.
//!
//! Modules:
//! - [`spline`]: knot placement and Cox–de Boor basis evaluation
//! - [`quadrature`]: composite Gauss–Legendre grids
//! - [`model`]: the tilted conditional law (normalizer, moments, quantiles)
//! - [`fit`]: damped Newton maximum likelihood
//! - [`effects`]: marginal and quantile effects
//! - [`inference`]: Σ blocks, Wald intervals, AIC/BIC, carrier-curve band
//! - [`baselines`]: parametric GLM comparisons
//! - [`sim`]: Monte Carlo designs and the replicate runner

pub mod baselines;
pub mod effects;
pub mod error;
pub mod fit;
pub mod inference;
mod linalg;
pub mod model;
pub mod quadrature;
pub mod sim;
pub mod spline;

pub use error::{Result, SemfxError};
pub use fit::{fit_discrete, fit_mle, Dataset, FitConfig, FittedModel};

pub use model::{SupportDescriptor, TiltModel};
pub use spline::{KnotVector, SplineBasis};
