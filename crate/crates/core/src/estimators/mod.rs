//! Estimator catalog, truncation, Riesz representers, variance and
//! cross-fitting.
//!
//! Every estimator reports an influence vector alongside its point estimate;
//! the variance is its empirical variance over `n` and cross-fitting pools
//! these vectors across folds.

mod basic;
mod crossfit;
mod recipe;

pub use basic::{
    estimate_aipw, estimate_aipw_sn, estimate_direct, estimate_ipw, estimate_ipw_sn, estimate_tmle,
    estimate_tmle_logistic, ArmWeights,
};
pub use crossfit::{crossfit, fit_fold, FoldEstimate, SplitMode};
pub use recipe::{MlpSettings, NuisanceSpec, OutcomeClass, PropensityClass, Recipe};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::variance;
use crate::{Error, Result, Z_95};

/// Policy rule `c(X)` in `[0, 1]` for the policy-value functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum PolicyRule {
    /// Treat with the same probability everywhere.
    Constant { value: f64 },
    /// Treat exactly when `x[feature] > cutoff`.
    Threshold { feature: usize, cutoff: f64 },
}

impl PolicyRule {
    pub fn evaluate(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        match *self {
            PolicyRule::Constant { value } => {
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::InvalidInput(format!("policy value {value} outside [0, 1]")));
                }
                Ok(vec![value; x.nrows()])
            }
            PolicyRule::Threshold { feature, cutoff } => {
                if feature >= x.ncols() {
                    return Err(Error::InvalidInput(format!(
                        "policy feature {feature} out of range for {} columns",
                        x.ncols()
                    )));
                }
                Ok((0..x.nrows()).map(|i| if x[(i, feature)] > cutoff { 1.0 } else { 0.0 }).collect())
            }
        }
    }
}

/// Linear functional of the outcome regression being estimated.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RieszSpec {
    /// `P[Y(1)]` with outcomes seen only where `A = 1`.
    #[default]
    MeanMissingOutcome,
    /// `P[Y(1) - Y(0)]`.
    FullAte,
    /// `P[c(X) Y(1) + (1 - c(X)) Y(0)]`.
    PolicyValue { policy: PolicyRule },
}

impl RieszSpec {
    pub fn is_two_arm(&self) -> bool {
        !matches!(self, RieszSpec::MeanMissingOutcome)
    }
}

/// Lower-bound truncation: entries below `eta` are raised to `eta`.
pub fn truncate(pi: &[f64], eta: f64) -> Vec<f64> {
    pi.iter().map(|&p| if p < eta { eta } else { p }).collect()
}

/// Per-row representer `a(W) = c A / pi + (1 - c)(1 - A) / (1 - pi)` with
/// `c = 1` for the missing outcome and the signed pair `(1, -1)` for the ATE.
pub fn riesz_values(spec: &RieszSpec, pi_hat: &[f64], a: &[bool], x: &DMatrix<f64>) -> Result<Vec<f64>> {
    let w = ArmWeights::new(spec, x)?;
    if pi_hat.len() != a.len() || a.len() != x.nrows() {
        return Err(Error::InvalidInput("representer length mismatch".into()));
    }
    (0..a.len())
        .map(|i| {
            let p = pi_hat[i];
            if a[i] {
                if !(p > 0.0) {
                    return Err(Error::InvalidValue {
                        row: i + 1,
                        column: "pi".into(),
                        reason: format!("propensity {p} on a treated row"),
                    });
                }
                Ok(w.w1[i] / p)
            } else if spec.is_two_arm() {
                if !(p < 1.0) {
                    return Err(Error::InvalidValue {
                        row: i + 1,
                        column: "pi".into(),
                        reason: format!("propensity {p} leaves no weight for the control arm"),
                    });
                }
                Ok(w.w0[i] / (1.0 - p))
            } else {
                Ok(0.0)
            }
        })
        .collect()
}

/// Feasibility record of one constrained fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRecord {
    pub residual: f64,
    pub scale: f64,
    pub tol: f64,
}

impl ConstraintRecord {
    pub fn relative(&self) -> f64 {
        if self.scale > 0.0 {
            self.residual.abs() / self.scale
        } else {
            self.residual.abs()
        }
    }

    pub fn satisfied(&self) -> bool {
        self.relative() <= self.tol
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub min_pi: f64,
    pub max_inv_pi: f64,
    /// Targeting fluctuation or self-normalization shift.
    pub epsilon: Option<f64>,
    /// Lagrange multiplier of a constrained fit.
    pub multiplier: Option<f64>,
    /// One record per constrained fit (one per fold when cross-fitted).
    pub constraints: Vec<ConstraintRecord>,
}

impl Diagnostics {
    pub fn from_pi(pi: &[f64]) -> Self {
        let min_pi = pi.iter().copied().fold(f64::INFINITY, f64::min);
        Self {
            min_pi,
            max_inv_pi: 1.0 / min_pi,
            ..Default::default()
        }
    }

    pub fn max_relative_residual(&self) -> Option<f64> {
        self.constraints.iter().map(|c| c.relative()).reduce(f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub psi_hat: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub diagnostics: Diagnostics,
    /// Per-row influence values whose empirical variance over `n` is `variance`.
    #[serde(skip)]
    pub influence: Vec<f64>,
    /// Propensities the estimate was computed with, row-aligned with `influence`.
    #[serde(skip)]
    pub pi_hat: Vec<f64>,
}

impl EstimateResult {
    /// `variance = Var_n(influence) / n` and the normal interval around `psi`.
    pub fn from_influence(psi: f64, influence: Vec<f64>, pi_hat: Vec<f64>, diagnostics: Diagnostics) -> Result<Self> {
        if !psi.is_finite() {
            return Err(Error::InvalidInput(format!("estimate is not finite ({psi})")));
        }
        let n = influence.len().max(1) as f64;
        let v = if influence.len() > 1 { variance(&influence) / n } else { 0.0 };
        let half = Z_95 * v.sqrt();
        Ok(Self {
            psi_hat: psi,
            variance: v,
            ci_low: psi - half,
            ci_high: psi + half,
            diagnostics,
            influence,
            pi_hat,
        })
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci_low <= truth && truth <= self.ci_high
    }
}

/// Nuisance values evaluated on the rows an estimator runs on.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisanceFit {
    /// Propensities after the truncation policy.
    pub pi_hat: Vec<f64>,
    /// Outcome regression for the treated arm.
    pub mu1: Vec<f64>,
    /// Outcome regression for the control arm (two-arm functionals).
    pub mu0: Option<Vec<f64>>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub propensity: String,
    pub outcome: String,
    pub fold: Option<usize>,
}

impl NuisanceFit {
    pub fn new(pi_hat: Vec<f64>, mu1: Vec<f64>, mu0: Option<Vec<f64>>) -> Result<Self> {
        if mu1.len() != pi_hat.len() || mu0.as_ref().is_some_and(|m| m.len() != pi_hat.len()) {
            return Err(Error::InvalidInput("nuisance length mismatch".into()));
        }
        if let Some(i) = pi_hat.iter().position(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::InvalidValue {
                row: i + 1,
                column: "pi".into(),
                reason: format!("propensity {} outside (0, 1]", pi_hat[i]),
            });
        }
        if let Some(i) = mu1.iter().chain(mu0.iter().flatten()).position(|m| !m.is_finite()) {
            return Err(Error::InvalidValue {
                row: i % pi_hat.len().max(1) + 1,
                column: "mu".into(),
                reason: "outcome prediction is not finite".into(),
            });
        }
        Ok(Self {
            pi_hat,
            mu1,
            mu0,
            provenance: Provenance::default(),
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn truncated(mut self, eta: Option<f64>) -> Self {
        if let Some(eta) = eta {
            self.pi_hat = truncate(&self.pi_hat, eta);
        }
        self
    }
}
