//! Unconstrained nuisance fitters: least squares, logistic and fractional
//! logistic regression, plus outcome rescaling for logistic-link variants.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg::{least_squares, sigmoid, softplus, solve_spd_regularized, with_intercept};
use crate::{Error, Result};

/// Anything that maps covariate rows to a scalar prediction.
pub trait Predictor: Send + Sync {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// Leading entry is the intercept when `intercept_used`.
    pub coef: DVector<f64>,
    pub intercept_used: bool,
}

impl LinearModel {
    pub fn design(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        if self.intercept_used {
            with_intercept(x)
        } else {
            x.clone()
        }
    }
}

impl Predictor for LinearModel {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (self.design(x) * &self.coef).iter().copied().collect()
    }
}

/// Iteration record attached to iterative fits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

/// Logistic-link model. For fractional fits the predictions live on the
/// rescaled outcome space.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub coef: DVector<f64>,
    pub intercept_used: bool,
    pub diagnostics: FitDiagnostics,
}

impl LogisticModel {
    pub fn design(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        if self.intercept_used {
            with_intercept(x)
        } else {
            x.clone()
        }
    }

    pub fn predict_logit(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (self.design(x) * &self.coef).iter().copied().collect()
    }
}

impl Predictor for LogisticModel {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.predict_logit(x).into_iter().map(sigmoid).collect()
    }
}

/// Ordinary (optionally weighted) least squares.
pub fn fit_ols(
    x: &DMatrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    intercept: bool,
) -> Result<LinearModel> {
    let design = if intercept { with_intercept(x) } else { x.clone() };
    let coef = least_squares(&design, y, weights)?;
    Ok(LinearModel {
        coef,
        intercept_used: intercept,
    })
}

const NEWTON_MAX_ITER: usize = 100;
const PROX_MAX_ITER: usize = 5000;
const GRAD_TOL: f64 = 1e-8;
const MAX_HALVINGS: usize = 30;

/// Weighted Bernoulli quasi-likelihood `sum w (softplus(eta) - t eta)` and
/// its derivatives, normalized by the total weight.
struct QuasiLikelihood<'a> {
    z: &'a DMatrix<f64>,
    t: &'a [f64],
    w: &'a [f64],
    total: f64,
}

impl QuasiLikelihood<'_> {
    fn value(&self, beta: &DVector<f64>) -> f64 {
        let eta = self.z * beta;
        eta.iter()
            .zip(self.t)
            .zip(self.w)
            .map(|((&e, &t), &w)| w * (softplus(e) - t * e))
            .sum::<f64>()
            / self.total
    }

    fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        let eta = self.z * beta;
        let r = DVector::from_fn(eta.len(), |i, _| self.w[i] * (sigmoid(eta[i]) - self.t[i]));
        self.z.transpose() * r / self.total
    }

    fn hessian(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let eta = self.z * beta;
        let d = self.z.ncols();
        let mut h = DMatrix::zeros(d, d);
        for i in 0..self.z.nrows() {
            let p = sigmoid(eta[i]);
            let wi = self.w[i] * p * (1.0 - p);
            if wi == 0.0 {
                continue;
            }
            let row = self.z.row(i);
            h += wi * row.transpose() * row;
        }
        h / self.total
    }
}

/// Damped Newton with step halving on the quasi-likelihood.
fn newton(q: &QuasiLikelihood<'_>) -> (DVector<f64>, FitDiagnostics) {
    let mut beta = DVector::zeros(q.z.ncols());
    let mut f = q.value(&beta);
    let mut g = q.gradient(&beta);
    // relative to the weighted mean |column|: badly scaled columns put an
    // absolute 1e-8 below the rounding floor of the score
    let col_scale = (0..q.z.ncols())
        .map(|j| (0..q.z.nrows()).map(|i| q.w[i] * q.z[(i, j)].abs()).sum::<f64>() / q.total)
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    let tol = GRAD_TOL * col_scale.max(1.0);
    let mut it = 0;
    while it < NEWTON_MAX_ITER && g.norm() > tol {
        it += 1;
        let h = q.hessian(&beta);
        let Some(step) = solve_spd_regularized(&h, &g) else {
            break;
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let cand = &beta - t * &step;
            let fc = q.value(&cand);
            if fc.is_finite() && fc <= f {
                beta = cand;
                f = fc;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        g = q.gradient(&beta);
        if !accepted {
            break;
        }
    }
    let grad_norm = g.norm();
    (
        beta,
        FitDiagnostics {
            iterations: it,
            grad_norm,
            converged: grad_norm <= tol,
        },
    )
}

/// Logistic regression of a binary indicator on covariates.
///
/// With `l1 == 0` this is Newton/IRLS with step halving. With `l1 > 0` the
/// objective is `sum_i nll_i + l1 * sum_j s_j |beta_j|` where `s_j` is the
/// root-mean-square of column `j` (the intercept is never penalized), solved
/// by accelerated proximal gradient on the column-standardized design.
pub fn fit_logistic(x: &DMatrix<f64>, a: &[bool], intercept: bool, l1: f64) -> Result<LogisticModel> {
    let n = x.nrows();
    if a.len() != n {
        return Err(Error::InvalidInput("treatment length mismatch".into()));
    }
    if !(l1 >= 0.0) {
        return Err(Error::InvalidInput(format!("l1 penalty must be >= 0, got {l1}")));
    }
    let n1 = a.iter().filter(|&&t| t).count();
    if n1 == 0 || n1 == n {
        return Err(Error::InvalidInput("logistic fit needs both classes present".into()));
    }
    let z = if intercept { with_intercept(x) } else { x.clone() };
    let t: Vec<f64> = a.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let w = vec![1.0; n];
    let (coef, diagnostics) = if l1 == 0.0 {
        newton(&QuasiLikelihood {
            z: &z,
            t: &t,
            w: &w,
            total: n as f64,
        })
    } else {
        proximal_l1(&z, &t, l1, intercept)
    };
    let eta = &z * &coef;
    let mean_nll = eta
        .iter()
        .zip(&t)
        .map(|(&e, &ti)| softplus(e) - ti * e)
        .sum::<f64>()
        / n as f64;
    if l1 == 0.0 && mean_nll < 1e-6 {
        return Err(Error::Separation {
            coef_norm: coef.norm(),
        });
    }
    Ok(LogisticModel {
        coef,
        intercept_used: intercept,
        diagnostics,
    })
}

/// FISTA with function-value restart on the standardized design.
fn proximal_l1(z: &DMatrix<f64>, t: &[f64], l1: f64, intercept: bool) -> (DVector<f64>, FitDiagnostics) {
    let (n, d) = z.shape();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            if intercept && j == 0 {
                1.0
            } else {
                let rms = (z.column(j).norm_squared() / n as f64).sqrt();
                if rms > 0.0 {
                    rms
                } else {
                    1.0
                }
            }
        })
        .collect();
    let zs = DMatrix::from_fn(n, d, |i, j| z[(i, j)] / scale[j]);
    let penalized = |j: usize| !(intercept && j == 0);
    let w = vec![1.0; n];
    let q = QuasiLikelihood {
        z: &zs,
        t,
        w: &w,
        total: 1.0,
    };
    let objective = |g: &DVector<f64>| {
        q.value(g) + l1 * (0..d).filter(|&j| penalized(j)).map(|j| g[j].abs()).sum::<f64>()
    };
    let lip = 0.25 * (zs.transpose() * &zs).symmetric_eigenvalues().max().max(1e-300);
    let step = 1.0 / lip;
    let prox = |v: &DVector<f64>| {
        DVector::from_fn(d, |j, _| {
            if penalized(j) {
                let thr = l1 * step;
                v[j].signum() * (v[j].abs() - thr).max(0.0)
            } else {
                v[j]
            }
        })
    };

    let mut gamma = DVector::zeros(d);
    let mut momentum = gamma.clone();
    let mut tk = 1.0f64;
    let mut f_prev = objective(&gamma);
    let mut mapping_norm = f64::INFINITY;
    let mut it = 0;
    while it < PROX_MAX_ITER {
        it += 1;
        let next = prox(&(&momentum - step * q.gradient(&momentum)));
        let f_next = objective(&next);
        if f_next > f_prev {
            // restart acceleration from the last iterate
            momentum = gamma.clone();
            tk = 1.0;
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        momentum = &next + ((tk - 1.0) / t_next) * (&next - &gamma);
        gamma = next;
        tk = t_next;
        f_prev = f_next;
        let plain = prox(&(&gamma - step * q.gradient(&gamma)));
        mapping_norm = ((&gamma - plain) * lip).norm() / n as f64;
        if mapping_norm <= GRAD_TOL {
            break;
        }
    }
    let coef = DVector::from_fn(d, |j, _| gamma[j] / scale[j]);
    (
        coef,
        FitDiagnostics {
            iterations: it,
            grad_norm: mapping_norm,
            converged: mapping_norm <= GRAD_TOL,
        },
    )
}

/// Fractional logistic regression on targets in `[0, 1]` by IRLS on the
/// weighted Bernoulli quasi-likelihood.
pub fn fit_fractional_logistic(
    x: &DMatrix<f64>,
    y_frac: &[f64],
    weights: &[f64],
    intercept: bool,
) -> Result<LogisticModel> {
    let n = x.nrows();
    if y_frac.len() != n || weights.len() != n {
        return Err(Error::InvalidInput("fractional logistic length mismatch".into()));
    }
    if let Some(i) = y_frac.iter().position(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::InvalidValue {
            row: i + 1,
            column: "y".into(),
            reason: format!("fractional target {} outside [0, 1]", y_frac[i]),
        });
    }
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::InvalidInput("weights must be nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("weights sum to zero".into()));
    }
    let z = if intercept { with_intercept(x) } else { x.clone() };
    let (coef, diagnostics) = newton(&QuasiLikelihood {
        z: &z,
        t: y_frac,
        w: weights,
        total,
    });
    if !diagnostics.converged {
        return Err(Error::NonConvergence {
            what: "fractional logistic regression".into(),
            iterations: diagnostics.iterations,
            residual: diagnostics.grad_norm,
        });
    }
    Ok(LogisticModel {
        coef,
        intercept_used: intercept,
        diagnostics,
    })
}

/// Affine map of treated outcomes onto `[0, 1]` with widened margins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutcomeScaling {
    pub y_min: f64,
    pub y_max: f64,
    pub alpha: f64,
}

impl OutcomeScaling {
    pub fn scale(&self, y: f64) -> f64 {
        (y - self.y_min) / (self.y_max - self.y_min)
    }

    pub fn unscale(&self, t: f64) -> f64 {
        self.y_min + t * (self.y_max - self.y_min)
    }
}

/// `y_max = max + alpha |max|`, `y_min = min - alpha |min|`; for positive
/// outcomes these are `(1 + alpha) max` and `(1 - alpha) min`.
pub fn scale_outcomes(y_treated: &[f64], alpha: f64) -> Result<(OutcomeScaling, Vec<f64>)> {
    if y_treated.is_empty() {
        return Err(Error::NoTreated("outcome scaling".into()));
    }
    if !(alpha >= 0.0) {
        return Err(Error::InvalidInput(format!("alpha must be >= 0, got {alpha}")));
    }
    let max = y_treated.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = y_treated.iter().copied().fold(f64::INFINITY, f64::min);
    let s = OutcomeScaling {
        y_min: min - alpha * min.abs(),
        y_max: max + alpha * max.abs(),
        alpha,
    };
    if !(s.y_max > s.y_min) {
        return Err(Error::InvalidInput(format!(
            "degenerate outcome range [{}, {}]",
            s.y_min, s.y_max
        )));
    }
    let scaled = y_treated.iter().map(|&v| s.scale(v)).collect();
    Ok((s, scaled))
}

/// Area under the ROC curve by the rank statistic (ties count one half).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut pos = 0.0;
    let mut count = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            count += 1.0;
            if scores[i] > scores[j] {
                pos += 1.0;
            } else if scores[i] == scores[j] {
                pos += 0.5;
            }
        }
    }
    pos / count
}
