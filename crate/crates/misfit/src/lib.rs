//! Regression of a scalar outcome on a sparsely observed functional covariate.
//!
//! Each subject contributes a handful of noisy measurements of a latent curve
//! plus one outcome (continuous or binary). Fitting proceeds in stages:
//!
//! 1. [`smooth`] estimates the mean structure (penalized splines) and the
//!    covariance surface (local-linear smoothing of residual products),
//!    assembling the moments of the covariate process — optionally jointly
//!    with the outcome.
//! 2. [`fpca`] turns the covariance surface into a quadrature-weighted
//!    eigensystem, giving principal-component directions and variances.
//! 3. [`impute`] builds, per subject, the Gaussian law of the latent
//!    principal-component scores given the observed data, and either plugs in
//!    the conditional mean or draws multiple completions from the law.
//! 4. [`glmfit`] fits the outcome regression on each completed score matrix
//!    (least squares or logistic likelihood) and maps the coefficients back
//!    to a coefficient function on the grid.
//! 5. [`inference`] pools the completed-data fits with combining rules that
//!    account for between-imputation spread, and tests whether the
//!    coefficient function is identically zero via the squared norm and a
//!    weighted chi-square tail probability.
//!
//! [`simulate`] and [`experiment`] generate synthetic sparse designs and run
//! replicated comparisons of the imputation variants; the `misfit` binary
//! exposes the whole pipeline on the command line.
//!
//! ```
//! use misfit::dataset::make_grid;
//! use misfit::simulate::{gen_linear, LinearSimConfig};
//! use misfit::experiment::fit_imputed;
//! use misfit::impute::ImputationMode;
//! use rand::SeedableRng;
//!
//! let cfg = LinearSimConfig::new(80, 5, 2, 0.0, 7).with_grid_size(21);
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
//! let (data, _truth) = gen_linear(&cfg, &mut rng)?;
//! let grid = make_grid(21)?;
//! let fit = fit_imputed(&data, &grid, ImputationMode::MuC, 5, 2, 42)?;
//! assert!(fit.p_value >= 0.0 && fit.p_value <= 1.0);
//! # Ok::<(), misfit::Error>(())
//! ```

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod fpca;
pub mod glmfit;
pub mod impute;
pub mod inference;
pub mod numerics;
pub mod simulate;
pub mod smooth;

#[cfg(doctest)]
mod book;

pub use error::{Error, Result};
