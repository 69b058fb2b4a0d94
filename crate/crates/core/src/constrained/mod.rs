//! Equality-constrained fitters: the closed-form linear C-Learner, the
//! constrained fractional logistic outcome model, the dual (balancing)
//! propensity model, and the parametric propensity fluctuation.

pub mod auglag;
mod dual;
mod fluc;
mod linear;
mod logistic;
pub mod simplex;

pub use auglag::{augmented_lagrangian, AugLagOptions, AugLagSolution, SmoothFn};
pub use dual::{dual_balance_residual, solve_dual_propensity, solve_dual_propensity_split};
pub use fluc::{solve_param_fluc, ParamFlucFit};
pub use linear::solve_constrained_ols;
pub use logistic::solve_clearner_logistic;
pub use simplex::{nelder_mead, SimplexOptions, SimplexResult};

use crate::models::{LinearModel, LogisticModel, Predictor};
use crate::{Error, Result};
use nalgebra::DMatrix;

/// Per-row direction of the first-order correction (`A / pi` for the mean
/// missing outcome, a representer-weighted analogue otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct CleverCovariate {
    pub h: Vec<f64>,
}

impl CleverCovariate {
    pub fn new(h: Vec<f64>) -> Result<Self> {
        if let Some(i) = h.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue {
                row: i + 1,
                column: "h".into(),
                reason: "clever covariate is not finite".into(),
            });
        }
        Ok(Self { h })
    }

    /// `A / pi` for the mean missing outcome.
    pub fn missing_outcome(a: &[bool], pi: &[f64]) -> Result<Self> {
        Self::new(
            a.iter()
                .zip(pi)
                .map(|(&t, &p)| if t { 1.0 / p } else { 0.0 })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstrainedModel {
    Linear(LinearModel),
    Logistic(LogisticModel),
}

impl Predictor for ConstrainedModel {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        match self {
            ConstrainedModel::Linear(m) => m.predict(x),
            ConstrainedModel::Logistic(m) => m.predict(x),
        }
    }
}

/// Solution of a constrained fit together with its feasibility record.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedFit {
    pub model: ConstrainedModel,
    /// Closed-form `lambda` or the final augmented-Lagrangian multiplier.
    pub multiplier: f64,
    /// Achieved value of the constraint expression, unnormalized.
    pub residual: f64,
    /// Normalizer for `residual`; success means `|residual| <= tol * scale`.
    pub scale: f64,
    pub tol: f64,
    pub iterations: usize,
}

impl ConstrainedFit {
    pub fn relative_residual(&self) -> f64 {
        if self.scale > 0.0 {
            self.residual.abs() / self.scale
        } else {
            self.residual.abs()
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.relative_residual() <= self.tol
    }
}
