//! Small numeric helpers shared across fitters.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Singular values below this fraction of the largest are treated as zero.
const RANK_TOL: f64 = 1e-12;

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `log(1 + exp(t))` without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance with the `n - 1` denominator; zero for a single value.
pub fn variance(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

pub fn std_dev(v: &[f64]) -> f64 {
    variance(v).sqrt()
}

/// Gathers the given rows of `x` into a new matrix.
pub fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

pub fn select<T: Copy>(v: &[T], rows: &[usize]) -> Vec<T> {
    rows.iter().map(|&i| v[i]).collect()
}

/// Prepends a column of ones.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), x.ncols() + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] })
}

/// Ratio of extreme singular values; infinite for an exactly singular matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Weighted least squares `argmin sum w_i (y_i - x_i' b)^2` via a QR solve of
/// the row-scaled system. Fails with the condition-number estimate when the
/// weighted design is numerically rank deficient.
pub fn least_squares(x: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>) -> Result<DVector<f64>> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(Error::InvalidInput(format!(
            "design has {n} rows but target has {} entries",
            y.len()
        )));
    }
    if n < d || d == 0 {
        return Err(Error::RankDeficient {
            condition: f64::INFINITY,
        });
    }
    let (xs, ys) = match weights {
        Some(w) => {
            if w.len() != n {
                return Err(Error::InvalidInput("weight length mismatch".into()));
            }
            if w.iter().any(|&wi| !(wi >= 0.0) || !wi.is_finite()) {
                return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
            }
            let sw: Vec<f64> = w.iter().map(|wi| wi.sqrt()).collect();
            (
                DMatrix::from_fn(n, d, |i, j| x[(i, j)] * sw[i]),
                DVector::from_fn(n, |i, _| y[i] * sw[i]),
            )
        }
        None => (x.clone(), DVector::from_column_slice(y)),
    };
    let sv = xs.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if !(smin > RANK_TOL * smax) {
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        return Err(Error::RankDeficient { condition });
    }
    let qr = xs.qr();
    let qty = qr.q().transpose() * ys;
    let r = qr.r();
    r.solve_upper_triangular(&qty)
        .ok_or(Error::RankDeficient {
            condition: smax / smin,
        })
}

/// Solves `a x = b` for symmetric positive definite `a`, adding the smallest
/// diagonal shift (relative to the diagonal scale) that makes a Cholesky
/// factorization succeed.
pub fn solve_spd_regularized(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut shift = 1e-12 * scale;
    for _ in 0..40 {
        let mut shifted = a.clone();
        for i in 0..a.nrows() {
            shifted[(i, i)] += shift;
        }
        if let Some(ch) = shifted.cholesky() {
            return Some(ch.solve(b));
        }
        shift *= 10.0;
    }
    None
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
