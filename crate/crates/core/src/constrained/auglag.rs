//! Augmented-Lagrangian solver for one smooth equality constraint.

use nalgebra::{DMatrix, DVector};

use crate::linalg::solve_spd_regularized;
use crate::{Error, Result};

/// A smooth scalar function of a parameter vector.
pub trait SmoothFn {
    fn dim(&self) -> usize;
    fn value(&self, theta: &DVector<f64>) -> f64;
    fn gradient(&self, theta: &DVector<f64>) -> DVector<f64>;
    /// Exact Hessian if cheaply available; the inner solver falls back to
    /// BFGS otherwise.
    fn hessian(&self, _theta: &DVector<f64>) -> Option<DMatrix<f64>> {
        None
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AugLagOptions {
    pub tol: f64,
    pub max_outer: usize,
    /// Total inner iterations across all outer rounds.
    pub max_inner_total: usize,
    pub rho0: f64,
}

impl Default for AugLagOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_outer: 50,
            max_inner_total: 1000,
            rho0: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AugLagSolution {
    pub theta: DVector<f64>,
    pub multiplier: f64,
    pub residual: f64,
    pub stationarity: f64,
    pub iterations: usize,
    pub outer_rounds: usize,
}

const ARMIJO_C: f64 = 1e-4;
const MAX_BACKTRACK: usize = 60;

struct Lagrangian<'a> {
    f: &'a dyn SmoothFn,
    c: &'a dyn SmoothFn,
    lambda: f64,
    rho: f64,
}

impl Lagrangian<'_> {
    fn value(&self, th: &DVector<f64>) -> f64 {
        let c = self.c.value(th);
        self.f.value(th) + self.lambda * c + 0.5 * self.rho * c * c
    }

    fn gradient(&self, th: &DVector<f64>) -> DVector<f64> {
        let c = self.c.value(th);
        self.f.gradient(th) + (self.lambda + self.rho * c) * self.c.gradient(th)
    }

    fn hessian(&self, th: &DVector<f64>) -> Option<DMatrix<f64>> {
        let hf = self.f.hessian(th)?;
        let hc = self.c.hessian(th)?;
        let c = self.c.value(th);
        let gc = self.c.gradient(th);
        Some(hf + (self.lambda + self.rho * c) * hc + self.rho * &gc * gc.transpose())
    }
}

/// Minimizes `f` subject to `c(theta) = 0`.
///
/// Each outer round minimizes `f + lambda c + rho/2 c^2` (Newton when both
/// hooks expose Hessians, BFGS otherwise, Armijo backtracking either way),
/// then updates `lambda += rho c`. `rho` grows tenfold whenever a round fails
/// to cut `|c|` to a quarter of its previous value.
pub fn augmented_lagrangian(
    objective: &dyn SmoothFn,
    constraint: &dyn SmoothFn,
    theta0: &DVector<f64>,
    opts: &AugLagOptions,
) -> Result<AugLagSolution> {
    let d = objective.dim();
    if constraint.dim() != d || theta0.len() != d {
        return Err(Error::InvalidInput("augmented Lagrangian dimension mismatch".into()));
    }
    let stat_tol = opts.tol * (1.0 + objective.gradient(theta0).norm());
    let mut theta = theta0.clone();
    let mut lag = Lagrangian {
        f: objective,
        c: constraint,
        lambda: 0.0,
        rho: opts.rho0,
    };
    let mut used = 0usize;
    let mut prev_c = constraint.value(&theta).abs();
    let mut best = (theta.clone(), prev_c);

    for round in 0..opts.max_outer {
        let budget = opts.max_inner_total.saturating_sub(used);
        let (next, iters, stat) = minimize_inner(&lag, &theta, stat_tol, budget);
        used += iters;
        theta = next;
        let c = constraint.value(&theta);
        if c.abs() < best.1 {
            best = (theta.clone(), c.abs());
        }
        lag.lambda += lag.rho * c;
        if c.abs() <= opts.tol && stat <= stat_tol {
            return Ok(AugLagSolution {
                theta,
                multiplier: lag.lambda,
                residual: c,
                stationarity: stat,
                iterations: used,
                outer_rounds: round + 1,
            });
        }
        if used >= opts.max_inner_total {
            break;
        }
        if c.abs() > 0.25 * prev_c {
            lag.rho *= 10.0;
        }
        prev_c = c.abs();
    }
    Err(Error::BudgetExhausted {
        iterations: used,
        residual: best.1,
        best: best.0.iter().copied().collect(),
    })
}

/// Returns the iterate, iterations spent and final gradient norm.
fn minimize_inner(
    lag: &Lagrangian<'_>,
    start: &DVector<f64>,
    tol: f64,
    budget: usize,
) -> (DVector<f64>, usize, f64) {
    let d = start.len();
    let mut x = start.clone();
    let mut fx = lag.value(&x);
    let mut g = lag.gradient(&x);
    let mut inv_h = DMatrix::<f64>::identity(d, d);
    let mut first_bfgs = true;
    let mut it = 0;
    while it < budget && g.norm() > tol {
        it += 1;
        let newton_dir = lag.hessian(&x).and_then(|h| solve_spd_regularized(&h, &g));
        let mut dir = match newton_dir {
            Some(step) => -step,
            None => -(&inv_h * &g),
        };
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            dir = -g.clone();
            slope = -g.norm_squared();
            inv_h = DMatrix::identity(d, d);
        }
        let mut t = 1.0;
        let mut accepted = None;
        let g_norm = g.norm();
        let noise = 1e-12 * (1.0 + fx.abs());
        for _ in 0..MAX_BACKTRACK {
            let cand = &x + t * &dir;
            let fc = lag.value(&cand);
            if fc.is_finite() && fc <= fx + ARMIJO_C * t * slope {
                let gc = lag.gradient(&cand);
                accepted = Some((cand, fc, gc));
                break;
            }
            // near the optimum value decreases drown in rounding; fall back
            // to progress in the gradient norm
            if fc.is_finite() && fc <= fx + noise {
                let gc = lag.gradient(&cand);
                if gc.norm() < g_norm {
                    accepted = Some((cand, fc, gc));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((next, fnext, g_next)) = accepted else {
            break;
        };
        let s = &next - &x;
        let yv = &g_next - &g;
        let sy = s.dot(&yv);
        if sy > 1e-300 {
            if first_bfgs {
                // scale the initial inverse Hessian guess
                inv_h *= sy / yv.norm_squared();
                first_bfgs = false;
            }
            let rho = 1.0 / sy;
            let ident = DMatrix::<f64>::identity(d, d);
            let left = &ident - rho * &s * yv.transpose();
            let right = &ident - rho * &yv * s.transpose();
            inv_h = left * inv_h * right + rho * &s * s.transpose();
        }
        x = next;
        fx = fnext;
        g = g_next;
    }
    let norm = g.norm();
    (x, it, norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `0.5 (theta - target)' Q (theta - target)`.
    struct Quadratic {
        q: DMatrix<f64>,
        target: DVector<f64>,
        with_hessian: bool,
    }

    impl SmoothFn for Quadratic {
        fn dim(&self) -> usize {
            self.target.len()
        }
        fn value(&self, th: &DVector<f64>) -> f64 {
            let r = th - &self.target;
            0.5 * r.dot(&(&self.q * &r))
        }
        fn gradient(&self, th: &DVector<f64>) -> DVector<f64> {
            &self.q * (th - &self.target)
        }
        fn hessian(&self, _th: &DVector<f64>) -> Option<DMatrix<f64>> {
            self.with_hessian.then(|| self.q.clone())
        }
    }

    /// `a' theta - b`.
    struct Linear {
        a: DVector<f64>,
        b: f64,
    }

    impl SmoothFn for Linear {
        fn dim(&self) -> usize {
            self.a.len()
        }
        fn value(&self, th: &DVector<f64>) -> f64 {
            self.a.dot(th) - self.b
        }
        fn gradient(&self, _th: &DVector<f64>) -> DVector<f64> {
            self.a.clone()
        }
        fn hessian(&self, _th: &DVector<f64>) -> Option<DMatrix<f64>> {
            Some(DMatrix::zeros(self.a.len(), self.a.len()))
        }
    }

    fn kkt_oracle(q: &DMatrix<f64>, target: &DVector<f64>, a: &DVector<f64>, b: f64) -> DVector<f64> {
        // [Q a; a' 0][theta; nu] = [Q target; b]
        let d = target.len();
        let mut k = DMatrix::zeros(d + 1, d + 1);
        k.view_mut((0, 0), (d, d)).copy_from(q);
        for i in 0..d {
            k[(i, d)] = a[i];
            k[(d, i)] = a[i];
        }
        let mut rhs = DVector::zeros(d + 1);
        rhs.rows_mut(0, d).copy_from(&(q * target));
        rhs[d] = b;
        k.lu().solve(&rhs).unwrap().rows(0, d).into_owned()
    }

    fn problem() -> (DMatrix<f64>, DVector<f64>, DVector<f64>, f64) {
        let q = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let target = DVector::from_row_slice(&[1.0, -2.0, 0.5]);
        let a = DVector::from_row_slice(&[1.0, 1.0, 1.0]);
        (q, target, a, 0.3)
    }

    #[test]
    fn matches_kkt_solution_with_newton_and_bfgs() {
        let (q, target, a, b) = problem();
        let oracle = kkt_oracle(&q, &target, &a, b);
        for with_hessian in [true, false] {
            let f = Quadratic {
                q: q.clone(),
                target: target.clone(),
                with_hessian,
            };
            let c = Linear { a: a.clone(), b };
            let sol = augmented_lagrangian(&f, &c, &DVector::zeros(3), &AugLagOptions::default()).unwrap();
            assert!((sol.theta - &oracle).amax() < 1e-6, "hessian={with_hessian}");
            assert!(sol.residual.abs() <= 1e-8);
        }
    }

    #[test]
    fn zero_constraint_gives_unconstrained_minimizer() {
        let (q, target, ..) = problem();
        let f = Quadratic {
            q,
            target: target.clone(),
            with_hessian: true,
        };
        let c = Linear {
            a: DVector::zeros(3),
            b: 0.0,
        };
        let sol = augmented_lagrangian(&f, &c, &DVector::zeros(3), &AugLagOptions::default()).unwrap();
        assert!((sol.theta - target).amax() < 1e-8);
        assert_eq!(sol.multiplier, 0.0);
    }

    #[test]
    fn infeasible_constraint_exhausts_budget() {
        let (q, target, ..) = problem();
        let f = Quadratic {
            q,
            target,
            with_hessian: true,
        };
        let c = Linear {
            a: DVector::zeros(3),
            b: -1.0,
        };
        let err = augmented_lagrangian(&f, &c, &DVector::zeros(3), &AugLagOptions::default()).unwrap_err();
        match err {
            Error::BudgetExhausted { residual, best, .. } => {
                assert_eq!(residual, 1.0);
                assert_eq!(best.len(), 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
