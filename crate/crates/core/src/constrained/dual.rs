use nalgebra::{DMatrix, DVector};

use super::{augmented_lagrangian, AugLagOptions, ConstrainedFit, ConstrainedModel, SmoothFn};
use crate::linalg::{sigmoid, softplus};
use crate::models::{fit_logistic, FitDiagnostics, LogisticModel};
use crate::{Error, Result};

/// Mean Bernoulli negative log-likelihood of a logistic propensity model.
struct PropensityNll<'a> {
    x: &'a DMatrix<f64>,
    a: &'a [f64],
}

impl SmoothFn for PropensityNll<'_> {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn value(&self, b: &DVector<f64>) -> f64 {
        let eta = self.x * b;
        eta.iter().zip(self.a).map(|(&e, &a)| softplus(e) - a * e).sum::<f64>() / self.a.len() as f64
    }

    fn gradient(&self, b: &DVector<f64>) -> DVector<f64> {
        let eta = self.x * b;
        let r = DVector::from_fn(eta.len(), |i, _| sigmoid(eta[i]) - self.a[i]);
        self.x.transpose() * r / self.a.len() as f64
    }

    fn hessian(&self, b: &DVector<f64>) -> Option<DMatrix<f64>> {
        let eta = self.x * b;
        let xw = DMatrix::from_fn(self.x.nrows(), self.x.ncols(), |i, j| {
            let p = sigmoid(eta[i]);
            self.x[(i, j)] * p * (1.0 - p)
        });
        Some(self.x.transpose() * xw / self.a.len() as f64)
    }
}

/// `(sum A mu e^{-x b} - sum (1 - A) mu) / sum |mu|`.
struct Balance<'a> {
    x: &'a DMatrix<f64>,
    a: &'a [f64],
    mu: &'a [f64],
    scale: f64,
}

impl Balance<'_> {
    fn treated_terms(&self, b: &DVector<f64>) -> Vec<f64> {
        let eta = self.x * b;
        (0..eta.len()).map(|i| self.a[i] * self.mu[i] * (-eta[i]).exp()).collect()
    }
}

impl SmoothFn for Balance<'_> {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn value(&self, b: &DVector<f64>) -> f64 {
        let treated: f64 = self.treated_terms(b).iter().sum();
        let control: f64 = self.a.iter().zip(self.mu).map(|(&a, &m)| (1.0 - a) * m).sum();
        (treated - control) / self.scale
    }

    fn gradient(&self, b: &DVector<f64>) -> DVector<f64> {
        let t = DVector::from_vec(self.treated_terms(b));
        -(self.x.transpose() * t) / self.scale
    }

    fn hessian(&self, b: &DVector<f64>) -> Option<DMatrix<f64>> {
        let t = self.treated_terms(b);
        let xw = DMatrix::from_fn(self.x.nrows(), self.x.ncols(), |i, j| self.x[(i, j)] * t[i]);
        Some(self.x.transpose() * xw / self.scale)
    }
}

/// `P_n[(1 - A / pi) mu]`, the balancing condition a dual propensity
/// model satisfies.
pub fn dual_balance_residual(a: &[bool], pi: &[f64], mu: &[f64]) -> f64 {
    let n = a.len() as f64;
    a.iter()
        .zip(pi)
        .zip(mu)
        .map(|((&t, &p), &m)| (1.0 - if t { 1.0 / p } else { 0.0 }) * m)
        .sum::<f64>()
        / n
}

/// Maximum-likelihood logistic propensity model subject to the balancing
/// condition `P_n[(1 - A / pi) mu] = 0` for a fixed outcome model `mu`.
///
/// The design is used as given. The stored residual is the balancing sum
/// `sum (1 - A / pi) mu` with scale `sum |mu|`.
pub fn solve_dual_propensity(x: &DMatrix<f64>, a: &[bool], mu_hat: &[f64]) -> Result<ConstrainedFit> {
    solve_dual_propensity_split(x, a, x, a, mu_hat)
}

/// Same problem with the likelihood taken over a training split and the
/// balancing condition imposed on an evaluation split.
pub fn solve_dual_propensity_split(
    x_tr: &DMatrix<f64>,
    a_tr: &[bool],
    x_ev: &DMatrix<f64>,
    a_ev: &[bool],
    mu_ev: &[f64],
) -> Result<ConstrainedFit> {
    if a_tr.len() != x_tr.nrows() || a_ev.len() != x_ev.nrows() || mu_ev.len() != x_ev.nrows() {
        return Err(Error::InvalidInput("dual propensity length mismatch".into()));
    }
    if x_tr.ncols() != x_ev.ncols() {
        return Err(Error::InvalidInput("train/eval column mismatch".into()));
    }
    let start = fit_logistic(x_tr, a_tr, false, 0.0)?;
    let af_tr: Vec<f64> = a_tr.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
    let af_ev: Vec<f64> = a_ev.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
    let scale: f64 = mu_ev.iter().map(|m| m.abs()).sum();
    let opts = AugLagOptions::default();
    let (coef, multiplier, iterations, stationarity) = if scale == 0.0 {
        (start.coef.clone(), 0.0, 0, start.diagnostics.grad_norm)
    } else {
        let objective = PropensityNll { x: x_tr, a: &af_tr };
        let constraint = Balance {
            x: x_ev,
            a: &af_ev,
            mu: mu_ev,
            scale,
        };
        let sol = augmented_lagrangian(&objective, &constraint, &start.coef, &opts)?;
        (sol.theta, sol.multiplier, sol.iterations, sol.stationarity)
    };
    let model = LogisticModel {
        coef,
        intercept_used: false,
        diagnostics: FitDiagnostics {
            iterations,
            grad_norm: stationarity,
            converged: true,
        },
    };
    let eta = x_ev * &model.coef;
    let pi: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
    let residual = dual_balance_residual(a_ev, &pi, mu_ev) * a_ev.len() as f64;
    Ok(ConstrainedFit {
        model: ConstrainedModel::Logistic(model),
        multiplier,
        residual,
        scale,
        tol: opts.tol,
        iterations,
    })
}
