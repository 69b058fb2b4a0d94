//! Constrained-learning estimators for the mean of a missing outcome and
//! related treatment-effect functionals.
//!
//! The crate fits nuisance models (propensity and outcome), trains outcome
//! models under the constraint that the empirical first-order error of the
//! plug-in estimator is exactly zero on the evaluation split, and compares
//! the result against one-step, targeting, weighting and balancing
//! estimators through a Monte-Carlo harness.
//!
//! Module map:
//!
//! - [`datagen`]: synthetic data-generating processes, CSV ingestion, folds.
//! - [`models`]: unconstrained least squares and logistic fitters.
//! - [`gbrt`]: regression trees and two-stage constrained boosting.
//! - [`mlp`]: a small network trained with a penalty and exact bias shift.
//! - [`constrained`]: equality-constrained solvers.
//! - [`estimators`]: estimator catalog, cross-fitting and variance.
//! - [`harness`]: Monte-Carlo runner, metrics and reports.

pub mod constrained;
pub mod datagen;
pub mod error;
pub mod estimators;
pub mod gbrt;
pub mod harness;
pub mod linalg;
pub mod mlp;
pub mod models;

pub use error::{Error, Result};

/// Two-sided 95% normal quantile used for every confidence interval.
pub const Z_95: f64 = 1.959964;
