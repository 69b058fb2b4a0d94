use super::dual::dual_balance_residual;
use super::simplex::{nelder_mead, SimplexOptions};
use crate::{Error, Result};

const OMEGA_FLOOR: f64 = 1e-6;

/// Two-step parametric fluctuation of an initial propensity model.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamFlucFit {
    /// `pi + lambda1 (1 - pi) mu` after the likelihood step.
    pub omega_step1: Vec<f64>,
    /// `omega_step1 + lambda2' [1, mu]`, the final propensities.
    pub omega: Vec<f64>,
    pub lambda1: f64,
    pub lambda2: [f64; 2],
    /// Largest component of the step-2 first-order condition.
    pub foc_residual: f64,
    pub foc_scale: f64,
    /// `P_n[(1 - A / omega) mu]` at the final propensities.
    pub balance_residual: f64,
    pub evaluations: usize,
}

impl ParamFlucFit {
    pub fn relative_foc(&self) -> f64 {
        self.foc_residual / self.foc_scale
    }
}

fn clamp_omega(w: f64) -> f64 {
    w.clamp(OMEGA_FLOOR, 1.0 - OMEGA_FLOOR)
}

/// Fluctuates `pi_hat` along `H = (1 - pi) mu` by maximum likelihood, then
/// calibrates the result along `g = [1, mu]` by maximizing
/// `sum A (log(omega + l'g) - log omega) - l'g`, whose first-order condition
/// is `sum (1 - A / omega_step) g = 0`. Both steps use the derivative-free
/// simplex.
pub fn solve_param_fluc(a: &[bool], pi_hat: &[f64], mu_hat: &[f64]) -> Result<ParamFlucFit> {
    let n = a.len();
    if pi_hat.len() != n || mu_hat.len() != n {
        return Err(Error::InvalidInput("param-fluc length mismatch".into()));
    }
    if n == 0 || a.iter().all(|&t| !t) {
        return Err(Error::NoTreated("param-fluc".into()));
    }
    if pi_hat.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::InvalidInput("param-fluc needs propensities strictly inside (0, 1)".into()));
    }
    let opts = SimplexOptions::default();
    let h: Vec<f64> = pi_hat.iter().zip(mu_hat).map(|(&p, &m)| (1.0 - p) * m).collect();
    let h_scale = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut evaluations = 0;

    // step 1, in units where the largest |H| is one
    let lambda1 = if h_scale == 0.0 {
        0.0
    } else {
        let mut neg_lik = |u: &[f64]| {
            -(0..n)
                .map(|i| {
                    let w = clamp_omega(pi_hat[i] + u[0] * h[i] / h_scale);
                    if a[i] {
                        w.ln()
                    } else {
                        (1.0 - w).ln()
                    }
                })
                .sum::<f64>()
        };
        let r = nelder_mead(&mut neg_lik, &[0.0], 0.1, &opts)?;
        evaluations += r.evaluations;
        r.x[0] / h_scale
    };
    let omega1: Vec<f64> = (0..n).map(|i| clamp_omega(pi_hat[i] + lambda1 * h[i])).collect();

    // step 2 over g = [1, mu / m]
    let m_scale = mu_hat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let m_scale = if m_scale > 0.0 { m_scale } else { 1.0 };
    let g = |i: usize| [1.0, mu_hat[i] / m_scale];
    let omega_at = |l: &[f64], i: usize| {
        let gi = g(i);
        omega1[i] + l[0] * gi[0] + l[1] * gi[1]
    };
    let mut neg_obj = |l: &[f64]| {
        let mut total = 0.0;
        for i in 0..n {
            let gi = g(i);
            let shift = l[0] * gi[0] + l[1] * gi[1];
            if a[i] {
                let w = omega1[i] + shift;
                if w <= OMEGA_FLOOR {
                    return f64::INFINITY;
                }
                total += w.ln() - omega1[i].ln();
            }
            total -= shift;
        }
        -total
    };
    let r = nelder_mead(&mut neg_obj, &[0.0, 0.0], 0.01, &opts)?;
    evaluations += r.evaluations;
    let l2 = [r.x[0], r.x[1] / m_scale];
    let omega: Vec<f64> = (0..n).map(|i| omega_at(&r.x, i)).collect();

    let mut foc = [0.0f64; 2];
    let mut foc_scale = [0.0f64; 2];
    for i in 0..n {
        let gi = g(i);
        let wt = if a[i] { 1.0 / omega[i] } else { 0.0 };
        for k in 0..2 {
            foc[k] += (wt - 1.0) * gi[k];
            foc_scale[k] += (wt + 1.0) * gi[k].abs();
        }
    }
    let (foc_residual, foc_scale) = if foc[0].abs() / foc_scale[0] >= foc[1].abs() / foc_scale[1].max(1e-300) {
        (foc[0].abs(), foc_scale[0])
    } else {
        (foc[1].abs(), foc_scale[1])
    };
    let balance_residual = dual_balance_residual(a, &omega, mu_hat);
    Ok(ParamFlucFit {
        omega_step1: omega1,
        omega,
        lambda1,
        lambda2: l2,
        foc_residual,
        foc_scale,
        balance_residual,
        evaluations,
    })
}
