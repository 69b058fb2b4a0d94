use nalgebra::DMatrix;

use super::{riesz_values, Diagnostics, EstimateResult, NuisanceFit, RieszSpec};
use crate::datagen::Dataset;
use crate::linalg::{logit, mean, sigmoid};
use crate::models::OutcomeScaling;
use crate::{Error, Result};

/// Coefficients of the functional on each arm's regression:
/// `psi = P[w1 mu(1, X) + w0 mu(0, X)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmWeights {
    pub w1: Vec<f64>,
    pub w0: Vec<f64>,
}

impl ArmWeights {
    pub fn new(spec: &RieszSpec, x: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        Ok(match spec {
            RieszSpec::MeanMissingOutcome => Self {
                w1: vec![1.0; n],
                w0: vec![0.0; n],
            },
            RieszSpec::FullAte => Self {
                w1: vec![1.0; n],
                w0: vec![-1.0; n],
            },
            RieszSpec::PolicyValue { policy } => {
                let c = policy.evaluate(x)?;
                Self {
                    w0: c.iter().map(|c| 1.0 - c).collect(),
                    w1: c,
                }
            }
        })
    }
}

/// Row-wise ingredients shared by every estimator.
struct Parts<'a> {
    data: &'a Dataset,
    fit: &'a NuisanceFit,
    w: ArmWeights,
    /// Representer `a(W)`.
    h: Vec<f64>,
    mu0: Vec<f64>,
}

impl<'a> Parts<'a> {
    fn new(data: &'a Dataset, fit: &'a NuisanceFit, spec: &RieszSpec) -> Result<Self> {
        let n = data.n();
        if n == 0 {
            return Err(Error::InvalidInput("empty evaluation data".into()));
        }
        if fit.pi_hat.len() != n || fit.mu1.len() != n {
            return Err(Error::InvalidInput("nuisance values do not match the evaluation rows".into()));
        }
        let mu0 = match (&fit.mu0, spec.is_two_arm()) {
            (Some(m), _) => m.clone(),
            (None, false) => vec![0.0; n],
            (None, true) => return Err(Error::InvalidInput("two-arm functional needs a control-arm outcome model".into())),
        };
        Ok(Self {
            w: ArmWeights::new(spec, &data.x)?,
            h: riesz_values(spec, &fit.pi_hat, &data.a, &data.x)?,
            data,
            fit,
            mu0,
        })
    }

    fn n(&self) -> usize {
        self.data.n()
    }

    /// `w1 (mu1 + d1) + w0 (mu0 + d0)`.
    fn plug_in(&self, d1: &[f64], d0: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| self.w.w1[i] * (self.fit.mu1[i] + d1[i]) + self.w.w0[i] * (self.mu0[i] + d0[i]))
            .collect()
    }

    /// `Y - mu(A, X)` after the shifts; zero where the representer vanishes.
    fn residual(&self, d1: &[f64], d0: &[f64]) -> Vec<f64> {
        (0..self.n())
            .map(|i| {
                if self.h[i] == 0.0 {
                    0.0
                } else if self.data.a[i] {
                    self.data.y[i] - self.fit.mu1[i] - d1[i]
                } else {
                    self.data.y[i] - self.mu0[i] - d0[i]
                }
            })
            .collect()
    }

    /// Plug-in plus representer-weighted residual, row by row.
    fn debiased(&self, d1: &[f64], d0: &[f64]) -> Vec<f64> {
        let plug = self.plug_in(d1, d0);
        let r = self.residual(d1, d0);
        (0..self.n()).map(|i| plug[i] + self.h[i] * r[i]).collect()
    }

    /// Per-arm sums of `1 / pi` and `1 / (1 - pi)` over the rows of that arm.
    fn arm_masses(&self) -> (f64, f64) {
        let mut s1 = 0.0;
        let mut s0 = 0.0;
        for i in 0..self.n() {
            let p = self.fit.pi_hat[i];
            if self.data.a[i] {
                s1 += 1.0 / p;
            } else if p < 1.0 {
                s0 += 1.0 / (1.0 - p);
            }
        }
        let n = self.n() as f64;
        (s1 / n, s0 / n)
    }

    fn uses_control_arm(&self) -> bool {
        self.w.w0.iter().any(|&w| w != 0.0)
    }

    fn diagnostics(&self) -> Diagnostics {
        Diagnostics::from_pi(&self.fit.pi_hat)
    }

    fn finish(&self, influence: Vec<f64>, diagnostics: Diagnostics) -> Result<EstimateResult> {
        EstimateResult::from_influence(mean(&influence), influence, self.fit.pi_hat.clone(), diagnostics)
    }
}

/// Plug-in `P_n[w1 mu1 + w0 mu0]`; variance `Var_n(plug-in) / n`.
pub fn estimate_direct(data: &Dataset, fit: &NuisanceFit, spec: &RieszSpec) -> Result<EstimateResult> {
    let p = Parts::new(data, fit, spec)?;
    let zero = vec![0.0; p.n()];
    p.finish(p.plug_in(&zero, &zero), p.diagnostics())
}

/// `P_n[a(W) Y]`.
pub fn estimate_ipw(data: &Dataset, fit: &NuisanceFit, spec: &RieszSpec) -> Result<EstimateResult> {
    let p = Parts::new(data, fit, spec)?;
    if data.n_treated() == 0 {
        return Err(Error::NoTreated("evaluation data".into()));
    }
    let terms: Vec<f64> = (0..p.n()).map(|i| if p.h[i] == 0.0 { 0.0 } else { p.h[i] * data.y[i] }).collect();
    p.finish(terms, p.diagnostics())
}

/// Hajek estimator: inverse weights rescaled per arm to average one, i.e.
/// IPW with `pi~ = pi P_n[A / pi]` (and likewise for the control arm).
pub fn estimate_ipw_sn(data: &Dataset, fit: &NuisanceFit, spec: &RieszSpec) -> Result<EstimateResult> {
    let p = Parts::new(data, fit, spec)?;
    if data.n_treated() == 0 {
        return Err(Error::NoTreated("evaluation data".into()));
    }
    let (s1, s0) = p.arm_masses();
    if s1 == 0.0 || (p.uses_control_arm() && s0 == 0.0) {
        return Err(Error::ZeroDenominator("self-normalized IPW".into()));
    }
    let terms: Vec<f64> = (0..p.n())
        .map(|i| {
            if p.h[i] == 0.0 {
                0.0
            } else if data.a[i] {
                p.h[i] * data.y[i] / s1
            } else {
                p.h[i] * data.y[i] / s0
            }
        })
        .collect();
    p.finish(terms, p.diagnostics())
}

/// One-step estimator `P_n[plug-in + a(W)(Y - mu(A, X))]`.
pub fn estimate_aipw(data: &Dataset, fit: &NuisanceFit, spec: &RieszSpec) -> Result<EstimateResult> {
    let p = Parts::new(data, fit, spec)?;
    let zero = vec![0.0; p.n()];
    p.finish(p.debiased(&zero, &zero), p.diagnostics())
}

/// Self-normalized one-step estimator. Each arm's regression is shifted by
/// the constant that zeroes that arm's weighted residual,
/// `d_a = P_n[h_a r] / P_n[h_a]`; for the missing outcome this is
/// `P_n[mu] + P_n[A/pi (Y - mu)] / P_n[A/pi]`.
pub fn estimate_aipw_sn(data: &Dataset, fit: &NuisanceFit, spec: &RieszSpec) -> Result<EstimateResult> {
    let p = Parts::new(data, fit, spec)?;
    let n = p.n();
    let zero = vec![0.0; n];
    let r = p.residual(&zero, &zero);
    let (mut num1, mut den1, mut num0, mut den0) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        if data.a[i] {
            num1 += p.h[i] * r[i];
            den1 += p.h[i];
        } else {
            num0 += p.h[i] * r[i];
            den0 += p.h[i];
        }
    }
    if den1 == 0.0 {
        return Err(Error::ZeroDenominator("self-normalized AIPW".into()));
    }
    let d1 = num1 / den1;
    let d0 = if p.uses_control_arm() {
        if den0 == 0.0 {
            return Err(Error::ZeroDenominator("self-normalized AIPW (control arm)".into()));
        }
        num0 / den0
    } else {
        0.0
    };
    let mut diag = p.diagnostics();
    diag.epsilon = Some(d1);
    p.finish(p.debiased(&vec![d1; n], &vec![d0; n]), diag)
}

/// Targeting with squared loss: `mu_eps(a, x) = mu(a, x) + eps H(a, x)` with
/// `eps* = sum a(W) (Y - mu) / sum a(W)^2`.
pub fn estimate_tmle(data: &Dataset, fit: &NuisanceFit, spec: &RieszSpec) -> Result<EstimateResult> {
    let p = Parts::new(data, fit, spec)?;
    let n = p.n();
    let zero = vec![0.0; n];
    let r = p.residual(&zero, &zero);
    let num: f64 = (0..n).map(|i| p.h[i] * r[i]).sum();
    let den: f64 = p.h.iter().map(|h| h * h).sum();
    if den == 0.0 {
        return Err(Error::ZeroDenominator("targeting fluctuation".into()));
    }
    let eps = num / den;
    let pi = &fit.pi_hat;
    let d1: Vec<f64> = (0..n).map(|i| eps * p.w.w1[i] / pi[i]).collect();
    let d0: Vec<f64> = (0..n)
        .map(|i| if p.w.w0[i] == 0.0 { 0.0 } else { eps * p.w.w0[i] / (1.0 - pi[i]) })
        .collect();
    let mut diag = p.diagnostics();
    diag.epsilon = Some(eps);
    p.finish(p.debiased(&d1, &d0), diag)
}

/// Mean NLL derivative of the logit fluctuation in `eps` and its slope.
fn logit_foc(l: &[f64], h: &[f64], t: &[f64], eps: f64) -> (f64, f64) {
    let m = l.len() as f64;
    let mut g = 0.0;
    let mut s = 0.0;
    for i in 0..l.len() {
        let q = sigmoid(l[i] + eps * h[i]);
        g -= h[i] * (t[i] - q);
        s += h[i] * h[i] * q * (1.0 - q);
    }
    (g / m, s / m)
}

/// Solves `sum A H (t - sigma(l + eps H)) = 0` by Newton steps inside an
/// expanding bracket, bisecting whenever a step leaves the bracket.
fn solve_logit_fluctuation(l: &[f64], h: &[f64], t: &[f64]) -> Result<(f64, f64)> {
    const TOL: f64 = 1e-10;
    let g = |e: f64| logit_foc(l, h, t, e).0;
    let g0 = g(0.0);
    if g0.abs() <= TOL {
        return Ok((0.0, g0));
    }
    // g is nondecreasing in eps
    let (mut lo, mut hi) = if g0 < 0.0 { (0.0, 1.0) } else { (-1.0, 0.0) };
    let mut width = 1.0;
    loop {
        if g(lo) <= 0.0 && g(hi) >= 0.0 {
            break;
        }
        width *= 2.0;
        if width > 1e8 {
            return Err(Error::NonConvergence {
                what: "logistic fluctuation bracket".into(),
                iterations: 0,
                residual: g0,
            });
        }
        if g0 < 0.0 {
            hi = width;
        } else {
            lo = -width;
        }
    }
    let mut eps = 0.0f64.clamp(lo, hi);
    for it in 0..500 {
        let (gv, slope) = logit_foc(l, h, t, eps);
        if gv.abs() <= TOL {
            return Ok((eps, gv));
        }
        if gv < 0.0 {
            lo = eps;
        } else {
            hi = eps;
        }
        let newton = eps - gv / slope;
        eps = if slope > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= f64::EPSILON * (1.0 + eps.abs()) {
            let gv = g(eps);
            if gv.abs() <= TOL {
                return Ok((eps, gv));
            }
            return Err(Error::NonConvergence {
                what: "logistic fluctuation".into(),
                iterations: it + 1,
                residual: gv,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "logistic fluctuation".into(),
        iterations: 500,
        residual: g(eps),
    })
}

/// Targeting under the logit link on the mean missing outcome. `fit.mu1`
/// holds the initial regression in outcome units, strictly inside the
/// scaling range; observed outcomes are mapped through `scaling` and
/// clipped to `[0, 1]`. The fluctuation `sigma(logit mu~ + eps / pi)` is
/// fitted on the treated rows and averaged over all rows.
pub fn estimate_tmle_logistic(data: &Dataset, fit: &NuisanceFit, scaling: &OutcomeScaling) -> Result<EstimateResult> {
    let n = data.n();
    if fit.pi_hat.len() != n || fit.mu1.len() != n {
        return Err(Error::InvalidInput("nuisance values do not match the evaluation rows".into()));
    }
    let treated = data.treated_rows();
    if treated.is_empty() {
        return Err(Error::NoTreated("evaluation data".into()));
    }
    let mut base = Vec::with_capacity(n);
    for (i, &m) in fit.mu1.iter().enumerate() {
        let t = scaling.scale(m);
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::InvalidValue {
                row: i + 1,
                column: "mu".into(),
                reason: format!("initial prediction {m} outside the scaling range"),
            });
        }
        base.push(logit(t));
    }
    let pi = &fit.pi_hat;
    let l: Vec<f64> = treated.iter().map(|&i| base[i]).collect();
    let h: Vec<f64> = treated.iter().map(|&i| 1.0 / pi[i]).collect();
    let t: Vec<f64> = treated.iter().map(|&i| scaling.scale(data.y[i]).clamp(0.0, 1.0)).collect();
    let (eps, _) = solve_logit_fluctuation(&l, &h, &t)?;
    let fluct: Vec<f64> = (0..n).map(|i| sigmoid(base[i] + eps / pi[i])).collect();
    // first-order term on the scaled outcomes over all rows
    let foc = treated.iter().zip(&t).map(|(&i, ti)| (ti - fluct[i]) / pi[i]).sum::<f64>() / n as f64;
    let mu_star: Vec<f64> = fluct.iter().map(|&q| scaling.unscale(q)).collect();
    let influence: Vec<f64> = (0..n)
        .map(|i| if data.a[i] { mu_star[i] + (data.y[i] - mu_star[i]) / pi[i] } else { mu_star[i] })
        .collect();
    let mut diag = Diagnostics::from_pi(pi);
    diag.epsilon = Some(eps);
    diag.constraints.push(super::ConstraintRecord {
        residual: foc,
        scale: 1.0,
        tol: 1e-8,
    });
    EstimateResult::from_influence(mean(&mu_star), influence, pi.clone(), diag)
}
