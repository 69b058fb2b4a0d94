//! Nelder-Mead simplex minimization.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    pub max_evals: usize,
    /// Stop once the simplex diameter falls below this.
    pub x_tol: f64,
    /// ...and the spread of function values below this.
    pub f_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            max_evals: 2000,
            x_tol: 1e-12,
            f_tol: 1e-14,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Minimizes `f` from `x0` with an axis-aligned initial simplex of edge `step`.
pub fn nelder_mead(
    f: &mut dyn FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    opts: &SimplexOptions,
) -> Result<SimplexResult> {
    let d = x0.len();
    let mut evals = 0usize;
    let mut eval = |p: &[f64], evals: &mut usize| {
        *evals += 1;
        let v = f(p);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut pts: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    pts.push((x0.to_vec(), eval(x0, &mut evals)));
    for j in 0..d {
        let mut p = x0.to_vec();
        p[j] += step;
        let v = eval(&p, &mut evals);
        pts.push((p, v));
    }
    let order = |pts: &mut Vec<(Vec<f64>, f64)>| pts.sort_by(|a, b| a.1.total_cmp(&b.1));

    loop {
        order(&mut pts);
        let spread = pts[d].1 - pts[0].1;
        let diameter = pts[1..]
            .iter()
            .map(|(p, _)| p.iter().zip(&pts[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let scale = 1.0 + pts[0].0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if diameter <= opts.x_tol * scale && spread <= opts.f_tol * (1.0 + pts[0].1.abs()) {
            return Ok(SimplexResult {
                x: pts[0].0.clone(),
                value: pts[0].1,
                evaluations: evals,
            });
        }
        if evals >= opts.max_evals {
            return Err(Error::NonConvergence {
                what: "Nelder-Mead simplex".into(),
                iterations: evals,
                residual: diameter,
            });
        }
        let centroid: Vec<f64> = (0..d)
            .map(|j| pts[..d].iter().map(|(p, _)| p[j]).sum::<f64>() / d as f64)
            .collect();
        let toward = |coef: f64| -> Vec<f64> {
            (0..d)
                .map(|j| centroid[j] + coef * (centroid[j] - pts[d].0[j]))
                .collect()
        };
        let refl = toward(opts.reflection);
        let f_refl = eval(&refl, &mut evals);
        if f_refl < pts[0].1 {
            let exp = toward(opts.reflection * opts.expansion);
            let f_exp = eval(&exp, &mut evals);
            pts[d] = if f_exp < f_refl { (exp, f_exp) } else { (refl, f_refl) };
            continue;
        }
        if f_refl < pts[d - 1].1 {
            pts[d] = (refl, f_refl);
            continue;
        }
        let (con, f_con) = if f_refl < pts[d].1 {
            let c = toward(opts.reflection * opts.contraction);
            let v = eval(&c, &mut evals);
            (c, v)
        } else {
            let c = toward(-opts.contraction);
            let v = eval(&c, &mut evals);
            (c, v)
        };
        if f_con < pts[d].1.min(f_refl) {
            pts[d] = (con, f_con);
            continue;
        }
        let best = pts[0].0.clone();
        for (p, v) in pts.iter_mut().skip(1) {
            for j in 0..d {
                p[j] = best[j] + opts.shrink * (p[j] - best[j]);
            }
            *v = eval(p, &mut evals);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_quadratic_minimum() {
        let mut f = |p: &[f64]| (p[0] - 1.5).powi(2) + 3.0 * (p[1] + 0.25).powi(2) + p[0] * p[1] * 0.1;
        let r = nelder_mead(&mut f, &[0.0, 0.0], 1.0, &SimplexOptions::default()).unwrap();
        // stationary point of the quadratic: 2(x-1.5)+0.1y=0, 6(y+.25)+0.1x=0
        let det = 2.0 * 6.0 - 0.01;
        let x = (3.0 * 6.0 - 0.1 * -1.5) / det;
        let y = (2.0 * -1.5 - 0.1 * 3.0) / det;
        assert!((r.x[0] - x).abs() < 1e-6 && (r.x[1] - y).abs() < 1e-6);
    }

    #[test]
    fn one_dimensional_rosenbrock_like() {
        let mut f = |p: &[f64]| (p[0] - 2.0).powi(4) + (p[0] - 2.0).powi(2);
        let r = nelder_mead(&mut f, &[10.0], 0.5, &SimplexOptions::default()).unwrap();
        assert!((r.x[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn budget_is_enforced() {
        let mut f = |p: &[f64]| -p[0];
        let err = nelder_mead(&mut f, &[0.0], 1.0, &SimplexOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NonConvergence { .. }));
    }
}
