use nalgebra::{DMatrix, DVector};

use super::{augmented_lagrangian, AugLagOptions, ConstrainedFit, ConstrainedModel, SmoothFn};
use crate::linalg::{sigmoid, softplus};
use crate::models::{fit_fractional_logistic, FitDiagnostics, LogisticModel};
use crate::{Error, Result};

/// Mean fractional-logistic quasi-likelihood over the training rows.
struct FractionalNll<'a> {
    x: &'a DMatrix<f64>,
    t: &'a [f64],
}

impl SmoothFn for FractionalNll<'_> {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn value(&self, th: &DVector<f64>) -> f64 {
        let eta = self.x * th;
        eta.iter().zip(self.t).map(|(&e, &t)| softplus(e) - t * e).sum::<f64>() / self.t.len() as f64
    }

    fn gradient(&self, th: &DVector<f64>) -> DVector<f64> {
        let eta = self.x * th;
        let r = DVector::from_fn(eta.len(), |i, _| sigmoid(eta[i]) - self.t[i]);
        self.x.transpose() * r / self.t.len() as f64
    }

    fn hessian(&self, th: &DVector<f64>) -> Option<DMatrix<f64>> {
        let eta = self.x * th;
        let w = DVector::from_fn(eta.len(), |i, _| {
            let p = sigmoid(eta[i]);
            p * (1.0 - p)
        });
        let xw = DMatrix::from_fn(self.x.nrows(), self.x.ncols(), |i, j| self.x[(i, j)] * w[i]);
        Some(self.x.transpose() * xw / self.t.len() as f64)
    }
}

/// `sum h (t - sigma(x theta)) / sum |h|`.
struct WeightedMoment<'a> {
    x: &'a DMatrix<f64>,
    t: &'a [f64],
    h: &'a [f64],
    scale: f64,
}

impl SmoothFn for WeightedMoment<'_> {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn value(&self, th: &DVector<f64>) -> f64 {
        let eta = self.x * th;
        (0..eta.len())
            .map(|i| self.h[i] * (self.t[i] - sigmoid(eta[i])))
            .sum::<f64>()
            / self.scale
    }

    fn gradient(&self, th: &DVector<f64>) -> DVector<f64> {
        let eta = self.x * th;
        let r = DVector::from_fn(eta.len(), |i, _| {
            let p = sigmoid(eta[i]);
            -self.h[i] * p * (1.0 - p)
        });
        self.x.transpose() * r / self.scale
    }

    fn hessian(&self, th: &DVector<f64>) -> Option<DMatrix<f64>> {
        let eta = self.x * th;
        let w: Vec<f64> = (0..eta.len())
            .map(|i| {
                let p = sigmoid(eta[i]);
                -self.h[i] * p * (1.0 - p) * (1.0 - 2.0 * p)
            })
            .collect();
        let xw = DMatrix::from_fn(self.x.nrows(), self.x.ncols(), |i, j| self.x[(i, j)] * w[i]);
        Some(self.x.transpose() * xw / self.scale)
    }
}

/// Fractional logistic regression on the training rows subject to the
/// weighted moment condition `sum h_ev (ytil_ev - sigma(x_ev theta)) = 0`.
///
/// Designs are used as given (no intercept is added) and outcomes must
/// already be rescaled to `[0, 1]`. Starts from the unconstrained fit.
pub fn solve_clearner_logistic(
    x_tr: &DMatrix<f64>,
    ytil_tr: &[f64],
    x_ev: &DMatrix<f64>,
    ytil_ev: &[f64],
    h_ev: &[f64],
) -> Result<ConstrainedFit> {
    if ytil_ev.len() != x_ev.nrows() || h_ev.len() != x_ev.nrows() {
        return Err(Error::InvalidInput("C-Learner-L eval length mismatch".into()));
    }
    if let Some(i) = ytil_ev.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidValue {
            row: i + 1,
            column: "y".into(),
            reason: "scaled eval outcome outside [0, 1]".into(),
        });
    }
    let start = fit_fractional_logistic(x_tr, ytil_tr, &vec![1.0; ytil_tr.len()], false)?;
    let scale: f64 = h_ev.iter().map(|v| v.abs()).sum();
    let opts = AugLagOptions::default();
    let objective = FractionalNll { x: x_tr, t: ytil_tr };
    if scale == 0.0 {
        return Ok(ConstrainedFit {
            model: ConstrainedModel::Logistic(start),
            multiplier: 0.0,
            residual: 0.0,
            scale: 0.0,
            tol: opts.tol,
            iterations: 0,
        });
    }
    let constraint = WeightedMoment {
        x: x_ev,
        t: ytil_ev,
        h: h_ev,
        scale,
    };
    let sol = augmented_lagrangian(&objective, &constraint, &start.coef, &opts)?;
    // independent re-evaluation of the raw constraint
    let eta = x_ev * &sol.theta;
    let residual: f64 = (0..eta.len()).map(|i| h_ev[i] * (ytil_ev[i] - sigmoid(eta[i]))).sum();
    Ok(ConstrainedFit {
        model: ConstrainedModel::Logistic(LogisticModel {
            coef: sol.theta,
            intercept_used: false,
            diagnostics: FitDiagnostics {
                iterations: sol.iterations,
                grad_norm: sol.stationarity,
                converged: true,
            },
        }),
        multiplier: sol.multiplier,
        residual,
        scale,
        tol: opts.tol,
        iterations: sol.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Predictor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x_tr = DMatrix::from_fn(50, 3, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let t_tr: Vec<f64> = (0..50).map(|i| sigmoid(0.3 + x_tr[(i, 1)] - 0.5 * x_tr[(i, 2)]) * rng.random_range(0.6..1.0)).collect();
        let x_ev = DMatrix::from_fn(40, 3, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
        let t_ev: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
        let h_ev: Vec<f64> = (0..40).map(|_| rng.random_range(1.0..10.0)).collect();
        (x_tr, t_tr, x_ev, t_ev, h_ev)
    }

    #[test]
    fn zero_direction_returns_unconstrained_fit() {
        let (x_tr, t_tr, x_ev, t_ev, _) = instance(1);
        let fit = solve_clearner_logistic(&x_tr, &t_tr, &x_ev, &t_ev, &[0.0; 40]).unwrap();
        let plain = fit_fractional_logistic(&x_tr, &t_tr, &[1.0; 50], false).unwrap();
        let ConstrainedModel::Logistic(m) = &fit.model else { unreachable!() };
        assert_eq!(m.coef, plain.coef);
    }

    #[test]
    fn constraint_is_met() {
        for seed in 0..10 {
            let (x_tr, t_tr, x_ev, t_ev, h_ev) = instance(seed);
            let fit = solve_clearner_logistic(&x_tr, &t_tr, &x_ev, &t_ev, &h_ev).unwrap();
            let pred = fit.model.predict(&x_ev);
            let direct: f64 = (0..40).map(|i| h_ev[i] * (t_ev[i] - pred[i])).sum();
            let total: f64 = h_ev.iter().sum();
            assert!(direct.abs() < 1e-8 * total, "seed {seed}: {direct}");
        }
    }
}
