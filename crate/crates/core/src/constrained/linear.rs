use nalgebra::{DMatrix, DVector};

use super::{ConstrainedFit, ConstrainedModel};
use crate::linalg::{condition_number, least_squares};
use crate::models::LinearModel;
use crate::{Error, Result};

/// Closed-form least squares under one linear equality constraint on the
/// evaluation split:
///
/// `min 1/2 |y_tr - x_tr theta|^2  s.t.  h_ev' (y_ev - x_ev theta) = 0`.
///
/// The KKT conditions give `theta = theta_ols + lambda v` with
/// `v = G^-1 x_ev' h_ev`, `G = x_tr' x_tr`. When train and eval coincide this
/// is OLS on the pseudo-labels `y + lambda h`. Rows should already be
/// restricted to those carrying outcomes.
pub fn solve_constrained_ols(
    x_tr: &DMatrix<f64>,
    y_tr: &[f64],
    x_ev: &DMatrix<f64>,
    y_ev: &[f64],
    h_ev: &[f64],
) -> Result<ConstrainedFit> {
    if y_ev.len() != x_ev.nrows() || h_ev.len() != x_ev.nrows() {
        return Err(Error::InvalidInput("constrained OLS length mismatch".into()));
    }
    if x_tr.ncols() != x_ev.ncols() {
        return Err(Error::InvalidInput("train/eval column mismatch".into()));
    }
    let theta_ols = least_squares(x_tr, y_tr, None)?;
    let hv = DVector::from_column_slice(h_ev);
    let yv = DVector::from_column_slice(y_ev);
    let gram = x_tr.transpose() * x_tr;
    let direction = x_ev.transpose() * &hv;
    let v = gram
        .cholesky()
        .map(|ch| ch.solve(&direction))
        .ok_or_else(|| Error::RankDeficient {
            condition: condition_number(x_tr),
        })?;
    let denom = direction.dot(&v);
    if !(denom.abs() >= 1e-12 * hv.norm_squared()) {
        return Err(Error::DegenerateDirection { denominator: denom });
    }
    let numer = hv.dot(&(&yv - x_ev * &theta_ols));
    let lambda = numer / denom;
    let theta = theta_ols + lambda * v;
    let residual = hv.dot(&(&yv - x_ev * &theta));
    Ok(ConstrainedFit {
        model: ConstrainedModel::Linear(LinearModel {
            coef: theta,
            intercept_used: false,
        }),
        multiplier: lambda,
        residual,
        scale: hv.norm() * yv.norm(),
        tol: 1e-8,
        iterations: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constrained::{augmented_lagrangian, AugLagOptions, SmoothFn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x_tr = DMatrix::from_fn(40, 4, |_, _| rng.random_range(-1.0..1.0));
        let y_tr: Vec<f64> = (0..40).map(|_| rng.random_range(-3.0..3.0)).collect();
        let x_ev = DMatrix::from_fn(30, 4, |_, _| rng.random_range(-1.0..1.0));
        let y_ev: Vec<f64> = (0..30).map(|_| rng.random_range(-3.0..3.0)).collect();
        let h_ev: Vec<f64> = (0..30).map(|_| rng.random_range(1.0..5.0)).collect();
        (x_tr, y_tr, x_ev, y_ev, h_ev)
    }

    #[test]
    fn constraint_holds() {
        for seed in 0..20 {
            let (x_tr, y_tr, x_ev, y_ev, h_ev) = instance(seed);
            let fit = solve_constrained_ols(&x_tr, &y_tr, &x_ev, &y_ev, &h_ev).unwrap();
            assert!(fit.is_feasible(), "seed {seed}: {}", fit.relative_residual());
        }
    }

    #[test]
    fn single_split_is_ols_on_pseudo_labels() {
        for seed in 0..20 {
            let (_, _, x, y, h) = instance(seed);
            let fit = solve_constrained_ols(&x, &y, &x, &y, &h).unwrap();
            assert!(fit.is_feasible());
            let ConstrainedModel::Linear(m) = &fit.model else { unreachable!() };
            let pseudo: Vec<f64> = y.iter().zip(&h).map(|(y, h)| y + fit.multiplier * h).collect();
            let refit = least_squares(&x, &pseudo, None).unwrap();
            assert!((refit - &m.coef).amax() < 1e-10);
        }
    }

    #[test]
    fn satisfied_constraint_gives_zero_multiplier() {
        let (x_tr, y_tr, x_ev, _, h_ev) = instance(3);
        let theta = least_squares(&x_tr, &y_tr, None).unwrap();
        let y_ev: Vec<f64> = (&x_ev * &theta).iter().copied().collect();
        let fit = solve_constrained_ols(&x_tr, &y_tr, &x_ev, &y_ev, &h_ev).unwrap();
        assert!(fit.multiplier.abs() < 1e-12);
        let ConstrainedModel::Linear(m) = &fit.model else { unreachable!() };
        assert!((&m.coef - theta).amax() < 1e-12);
    }

    #[test]
    fn orthogonal_direction_is_degenerate() {
        let x_tr = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let x_ev = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let err = solve_constrained_ols(&x_tr, &[1.0, 2.0], &x_ev, &[0.0, 1.0], &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::DegenerateDirection { .. }));
    }

    struct HalfSse<'a> {
        x: &'a DMatrix<f64>,
        y: DVector<f64>,
    }
    impl SmoothFn for HalfSse<'_> {
        fn dim(&self) -> usize {
            self.x.ncols()
        }
        fn value(&self, th: &DVector<f64>) -> f64 {
            0.5 * (&self.y - self.x * th).norm_squared()
        }
        fn gradient(&self, th: &DVector<f64>) -> DVector<f64> {
            -self.x.transpose() * (&self.y - self.x * th)
        }
    }
    struct EvalConstraint<'a> {
        x: &'a DMatrix<f64>,
        y: DVector<f64>,
        h: DVector<f64>,
        scale: f64,
    }
    impl SmoothFn for EvalConstraint<'_> {
        fn dim(&self) -> usize {
            self.x.ncols()
        }
        fn value(&self, th: &DVector<f64>) -> f64 {
            self.h.dot(&(&self.y - self.x * th)) / self.scale
        }
        fn gradient(&self, _th: &DVector<f64>) -> DVector<f64> {
            -self.x.transpose() * &self.h / self.scale
        }
    }

    #[test]
    fn matches_generic_solver() {
        for seed in 0..5 {
            let (x_tr, y_tr, x_ev, y_ev, h_ev) = instance(100 + seed);
            let fit = solve_constrained_ols(&x_tr, &y_tr, &x_ev, &y_ev, &h_ev).unwrap();
            let ConstrainedModel::Linear(m) = &fit.model else { unreachable!() };
            let f = HalfSse {
                x: &x_tr,
                y: DVector::from_vec(y_tr.clone()),
            };
            let h = DVector::from_vec(h_ev.clone());
            let c = EvalConstraint {
                x: &x_ev,
                y: DVector::from_vec(y_ev.clone()),
                scale: h.iter().map(|v| v.abs()).sum(),
                h,
            };
            let sol = augmented_lagrangian(&f, &c, &DVector::zeros(4), &AugLagOptions::default()).unwrap();
            assert!((sol.theta - &m.coef).amax() < 1e-6);
        }
    }
}
