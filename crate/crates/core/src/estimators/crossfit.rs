use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::basic::{
    estimate_aipw, estimate_aipw_sn, estimate_direct, estimate_ipw, estimate_ipw_sn, estimate_tmle, estimate_tmle_logistic,
};
use super::recipe::{NuisanceSpec, OutcomeClass, PropensityClass, Recipe};
use super::{riesz_values, truncate, ConstraintRecord, Diagnostics, EstimateResult, NuisanceFit, Provenance, RieszSpec};
use crate::constrained::{solve_clearner_logistic, solve_constrained_ols, solve_dual_propensity_split, solve_param_fluc};
use crate::datagen::{make_folds, Dataset, FoldPlan};
use crate::gbrt::{boost_fit, clearner_boost, BoostData, BoostParams, BoostSplit, GBRTModel};
use crate::harness::{grid_search_gbrt, select_by_score};
use crate::linalg::{mean, select, select_rows, with_intercept};
use crate::mlp::{default_lambda_grid, select_config, train_clearner_mlp, EvalSet};
use crate::models::{fit_fractional_logistic, fit_logistic, fit_ols, scale_outcomes, OutcomeScaling, Predictor};
use crate::{Error, Result};

/// How rows are split between nuisance training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitMode {
    /// Train, validation and evaluation are all the full sample.
    #[default]
    Single,
    /// `k` folds; fold `j` is evaluation (and validation) for nuisances
    /// trained on its complement.
    CrossFit { k: usize },
}

impl SplitMode {
    pub fn plan(&self, n: usize, seed: u64) -> Result<Option<FoldPlan>> {
        match *self {
            SplitMode::Single => Ok(None),
            SplitMode::CrossFit { k } => make_folds(n, k, seed).map(Some),
        }
    }
}

/// One split's estimate with the nuisances it was finally computed from
/// (the constrained outcome model for C-Learner recipes, the solved
/// propensities for the balancing recipes).
#[derive(Debug, Clone)]
pub struct FoldEstimate {
    pub result: EstimateResult,
    pub nuisance: NuisanceFit,
    pub eval_rows: Vec<usize>,
}

fn design(x: &DMatrix<f64>, intercept: bool) -> DMatrix<f64> {
    if intercept {
        with_intercept(x)
    } else {
        x.clone()
    }
}

/// `A / pi (Y - mu) + mu` over the rows of `data`.
fn mmo_influence(data: &Dataset, pi: &[f64], mu: &[f64]) -> Vec<f64> {
    (0..data.n())
        .map(|i| if data.a[i] { mu[i] + (data.y[i] - mu[i]) / pi[i] } else { mu[i] })
        .collect()
}

struct Split {
    tr: Dataset,
    ev: Dataset,
    tr_treated: Vec<usize>,
    ev_treated: Vec<usize>,
}

impl Split {
    fn x_tr1(&self) -> DMatrix<f64> {
        select_rows(&self.tr.x, &self.tr_treated)
    }
    fn y_tr1(&self) -> Vec<f64> {
        select(&self.tr.y, &self.tr_treated)
    }
    fn x_ev1(&self) -> DMatrix<f64> {
        select_rows(&self.ev.x, &self.ev_treated)
    }
    fn y_ev1(&self) -> Vec<f64> {
        select(&self.ev.y, &self.ev_treated)
    }
}

struct Propensity {
    tr: Vec<f64>,
    ev: Vec<f64>,
    label: &'static str,
}

fn fit_propensity(s: &Split, spec: &NuisanceSpec) -> Result<Propensity> {
    let (tr, ev, label) = match spec.propensity {
        PropensityClass::Known => {
            let get = |d: &Dataset| {
                d.true_pi
                    .clone()
                    .ok_or_else(|| Error::Config("known propensities requested but the dataset has none".into()))
            };
            (get(&s.tr)?, get(&s.ev)?, "known")
        }
        PropensityClass::Logistic | PropensityClass::LogisticL1 { .. } => {
            let (l1, label) = match spec.propensity {
                PropensityClass::LogisticL1 { l1 } => (l1 * s.tr.n() as f64, "logistic_l1"),
                _ => (0.0, "logistic"),
            };
            let m = fit_logistic(&s.tr.x, &s.tr.a, spec.intercept, l1)?;
            (m.predict(&s.tr.x), m.predict(&s.ev.x), label)
        }
    };
    let (tr, ev) = match spec.truncation {
        Some(eta) => (truncate(&tr, eta), truncate(&ev, eta)),
        None => (tr, ev),
    };
    for p in tr.iter().chain(&ev) {
        if !(*p > 0.0) {
            return Err(Error::InvalidInput(format!(
                "estimated propensity {p} is zero; use truncation or an L1 penalty"
            )));
        }
    }
    Ok(Propensity { tr, ev, label })
}

/// Plain squared-loss boosting tuned over `grid` on validation MSE.
fn fit_gbrt_outcome(s: &Split, grid: &[BoostParams], seed: u64) -> Result<GBRTModel> {
    let (x_tr, y_tr, x_ev, y_ev) = (s.x_tr1(), s.y_tr1(), s.x_ev1(), s.y_ev1());
    let train = BoostData { x: &x_tr, y: &y_tr };
    let val = BoostData { x: &x_ev, y: &y_ev };
    let grid: Vec<BoostParams> = grid.iter().map(|p| BoostParams { seed, ..*p }).collect();
    let best = grid_search_gbrt(train, val, &grid)?;
    let mut target = |_: &GBRTModel, pred: &[f64]| -> Vec<f64> { y_tr.iter().zip(pred).map(|(y, f)| y - f).collect() };
    Ok(boost_fit(train, val, &best, &mut target)?.0)
}

/// Outcome regressions on the evaluation rows: treated arm and, for two-arm
/// functionals, control arm.
fn fit_outcome(s: &Split, spec: &NuisanceSpec, two_arm: bool, seed: u64) -> Result<(Vec<f64>, Option<Vec<f64>>, &'static str)> {
    match spec.outcome {
        OutcomeClass::Linear => {
            let m1 = fit_ols(&s.x_tr1(), &s.y_tr1(), None, spec.intercept)?;
            let mu0 = if two_arm {
                let ctrl: Vec<usize> = (0..s.tr.n()).filter(|&i| !s.tr.a[i]).collect();
                if ctrl.is_empty() {
                    return Err(Error::InvalidInput("training split has no control rows".into()));
                }
                let m0 = fit_ols(&select_rows(&s.tr.x, &ctrl), &select(&s.tr.y, &ctrl), None, spec.intercept)?;
                Some(m0.predict(&s.ev.x))
            } else {
                None
            };
            Ok((m1.predict(&s.ev.x), mu0, "ols"))
        }
        OutcomeClass::Gbrt => {
            if two_arm {
                return Err(Error::Config("boosted outcome models support only the mean missing outcome".into()));
            }
            let m = fit_gbrt_outcome(s, &spec.gbrt_grid, seed)?;
            Ok((m.predict(&s.ev.x), None, "gbrt"))
        }
    }
}

/// Fractional logistic regression of the scaled treated outcomes.
fn fit_scaled_outcome(s: &Split, spec: &NuisanceSpec) -> Result<(OutcomeScaling, Vec<f64>, DMatrix<f64>)> {
    let (scaling, ytil) = scale_outcomes(&s.y_tr1(), spec.scaling_alpha)?;
    let x1 = design(&s.x_tr1(), spec.intercept);
    Ok((scaling, ytil, x1))
}

/// Estimate built from a constrained outcome model: the plug-in with the
/// debiased influence values for the variance.
fn plug_in_result(ev: &Dataset, fit: &NuisanceFit, riesz: &RieszSpec, record: Option<ConstraintRecord>, multiplier: Option<f64>) -> Result<EstimateResult> {
    let direct = estimate_direct(ev, fit, riesz)?;
    let debiased = estimate_aipw(ev, fit, riesz)?;
    let mut diag = Diagnostics::from_pi(&fit.pi_hat);
    diag.multiplier = multiplier;
    diag.constraints.extend(record);
    EstimateResult::from_influence(direct.psi_hat, debiased.influence, fit.pi_hat.clone(), diag)
}

/// Fits every nuisance of `recipe` on `train` and estimates on `eval`.
#[allow(clippy::too_many_arguments)]
pub fn fit_fold(
    data: &Dataset,
    train: &[usize],
    eval: &[usize],
    recipe: Recipe,
    spec: &NuisanceSpec,
    riesz: &RieszSpec,
    seed: u64,
    fold: Option<usize>,
) -> Result<FoldEstimate> {
    let two_arm = riesz.is_two_arm();
    if two_arm && !recipe.supports_two_arm() {
        return Err(Error::Config(format!("recipe `{recipe}` supports only the mean missing outcome")));
    }
    let tr = data.subset(train);
    let ev = data.subset(eval);
    let s = Split {
        tr_treated: tr.treated_rows(),
        ev_treated: ev.treated_rows(),
        tr,
        ev,
    };
    let where_ = |what: &str| match fold {
        Some(k) => format!("{what} of fold {k}"),
        None => what.to_string(),
    };
    if s.ev_treated.is_empty() {
        return Err(Error::NoTreated(where_("evaluation rows")));
    }
    if s.tr_treated.is_empty() {
        return Err(Error::NoTreated(where_("training rows")));
    }
    let pi = fit_propensity(&s, spec)?;
    let prov = |outcome: &str| Provenance {
        propensity: pi.label.to_string(),
        outcome: outcome.to_string(),
        fold,
    };
    let ev = &s.ev;
    let (result, nuisance) = match recipe {
        Recipe::Direct | Recipe::Ipw | Recipe::IpwSn | Recipe::Aipw | Recipe::AipwSn | Recipe::Tmle => {
            let (mu1, mu0, label) = fit_outcome(&s, spec, two_arm, seed)?;
            let fit = NuisanceFit::new(pi.ev.clone(), mu1, mu0)?.with_provenance(prov(label));
            let f = match recipe {
                Recipe::Direct => estimate_direct,
                Recipe::Ipw => estimate_ipw,
                Recipe::IpwSn => estimate_ipw_sn,
                Recipe::Aipw => estimate_aipw,
                Recipe::AipwSn => estimate_aipw_sn,
                _ => estimate_tmle,
            };
            (f(ev, &fit, riesz)?, fit)
        }
        Recipe::TmleL => {
            let (scaling, ytil, x1) = fit_scaled_outcome(&s, spec)?;
            let m = fit_fractional_logistic(&x1, &ytil, &vec![1.0; ytil.len()], false)?;
            let mu1: Vec<f64> = m.predict(&design(&ev.x, spec.intercept)).iter().map(|&t| scaling.unscale(t)).collect();
            let fit = NuisanceFit::new(pi.ev.clone(), mu1, None)?.with_provenance(prov("fractional_logistic"));
            let r = estimate_tmle_logistic(ev, &fit, &scaling)?;
            (r, fit)
        }
        Recipe::ClearnerLinear => clearner_linear(&s, &pi, spec, riesz, prov("constrained_ols"))?,
        Recipe::ClearnerL => {
            let (scaling, ytil, x1) = fit_scaled_outcome(&s, spec)?;
            let x_ev1 = design(&s.x_ev1(), spec.intercept);
            let ytil_ev: Vec<f64> = s.y_ev1().iter().map(|&y| scaling.scale(y).clamp(0.0, 1.0)).collect();
            let h_ev: Vec<f64> = s.ev_treated.iter().map(|&i| 1.0 / pi.ev[i]).collect();
            let c = solve_clearner_logistic(&x1, &ytil, &x_ev1, &ytil_ev, &h_ev)?;
            let mu1: Vec<f64> = c.model.predict(&design(&ev.x, spec.intercept)).iter().map(|&t| scaling.unscale(t)).collect();
            let fit = NuisanceFit::new(pi.ev.clone(), mu1, None)?.with_provenance(prov("constrained_fractional_logistic"));
            let record = ConstraintRecord {
                residual: c.residual,
                scale: c.scale,
                tol: c.tol,
            };
            (plug_in_result(ev, &fit, riesz, Some(record), Some(c.multiplier))?, fit)
        }
        Recipe::ClearnerGbrt | Recipe::LagrangianGbrt => {
            let (x_tr1, y_tr1, x_ev1, y_ev1) = (s.x_tr1(), s.y_tr1(), s.x_ev1(), s.y_ev1());
            let pi_tr1 = select(&pi.tr, &s.tr_treated);
            let pi_ev1 = select(&pi.ev, &s.ev_treated);
            let train = BoostSplit {
                x: &x_tr1,
                y: &y_tr1,
                pi: &pi_tr1,
                n_rows: s.tr.n(),
            };
            let evs = BoostSplit {
                x: &x_ev1,
                y: &y_ev1,
                pi: &pi_ev1,
                n_rows: ev.n(),
            };
            let val = BoostData { x: &x_ev1, y: &y_ev1 };
            // stage-1 settings are tuned with the constrained hook in place
            let grid: Vec<BoostParams> = spec
                .gbrt_grid
                .iter()
                .map(|p| BoostParams {
                    seed,
                    max_trees_k: 0,
                    ..*p
                })
                .collect();
            let (best, _) = select_by_score(&grid, |p| {
                let (m, _) = clearner_boost(train, evs, val, p)?;
                let pred = m.predict(&x_ev1);
                Ok(pred.iter().zip(&y_ev1).map(|(f, y)| (y - f) * (y - f)).sum::<f64>() / y_ev1.len() as f64)
            })?;
            let mut params = grid[best];
            if recipe == Recipe::ClearnerGbrt {
                params.max_trees_k = spec.gbrt_grid[best].max_trees_k;
            }
            let (model, d) = clearner_boost(train, evs, val, &params)?;
            let fit = NuisanceFit::new(pi.ev.clone(), model.predict(&ev.x), None)?.with_provenance(prov("constrained_gbrt"));
            let record = (recipe == Recipe::ClearnerGbrt).then_some(ConstraintRecord {
                residual: d.residual,
                scale: 1.0,
                tol: d.tolerance,
            });
            (plug_in_result(ev, &fit, riesz, record, None)?, fit)
        }
        Recipe::ClearnerMlp => {
            let (x_tr1, y_tr1, x_ev1, y_ev1) = (s.x_tr1(), s.y_tr1(), s.x_ev1(), s.y_ev1());
            let pi_ev1 = select(&pi.ev, &s.ev_treated);
            let eval = EvalSet {
                x: &x_ev1,
                y: &y_ev1,
                pi: &pi_ev1,
                n_rows: ev.n(),
            };
            let lambdas = spec.mlp.lambdas.clone().unwrap_or_else(|| default_lambda_grid(eval));
            let mut nets = Vec::with_capacity(lambdas.len());
            let mut diags = Vec::with_capacity(lambdas.len());
            let mut kept = Vec::with_capacity(lambdas.len());
            let mut last_err = None;
            for &lambda in &lambdas {
                let cfg = crate::mlp::TrainConfig {
                    lambda,
                    seed,
                    ..spec.mlp.train
                };
                match train_clearner_mlp((&x_tr1, &y_tr1), (&x_ev1, &y_ev1), eval, &cfg, &spec.mlp.hidden) {
                    Ok((net, d)) => {
                        nets.push(net);
                        diags.push(d);
                        kept.push(lambda);
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            let Some(k) = select_config(&diags, spec.mlp.selector) else {
                return Err(last_err.unwrap_or_else(|| Error::Config("mlp lambda grid is empty".into())));
            };
            let fit = NuisanceFit::new(pi.ev.clone(), nets[k].predict(&ev.x), None)?.with_provenance(prov("constrained_mlp"));
            let scale = (0..y_ev1.len()).map(|i| (y_ev1[i] / pi_ev1[i]).abs()).sum::<f64>() / ev.n() as f64;
            let record = ConstraintRecord {
                residual: diags[k].eval_residual,
                scale,
                tol: 1e-8,
            };
            (plug_in_result(ev, &fit, riesz, Some(record), Some(kept[k]))?, fit)
        }
        Recipe::DualClearner | Recipe::DualClearnerSn => {
            let (mu, _, label) = fit_outcome(&s, spec, false, seed)?;
            let x_tr = design(&s.tr.x, spec.intercept);
            let x_ev = design(&ev.x, spec.intercept);
            let c = solve_dual_propensity_split(&x_tr, &s.tr.a, &x_ev, &ev.a, &mu)?;
            let pi_c = c.model.predict(&x_ev);
            if pi_c.iter().zip(&ev.a).any(|(&p, &t)| t && !(p > 0.0)) {
                return Err(Error::InvalidInput("balancing propensity underflowed to zero".into()));
            }
            let fit = NuisanceFit {
                pi_hat: pi_c,
                mu1: mu,
                mu0: None,
                provenance: Provenance {
                    propensity: "dual_logistic".into(),
                    outcome: label.into(),
                    fold,
                },
            };
            let mut diag = Diagnostics::from_pi(&fit.pi_hat);
            diag.multiplier = Some(c.multiplier);
            diag.constraints.push(ConstraintRecord {
                residual: c.residual,
                scale: c.scale,
                tol: c.tol,
            });
            (weighting_result(ev, &fit, recipe == Recipe::DualClearnerSn, diag)?, fit)
        }
        Recipe::ParamFluc | Recipe::ParamFlucSn => {
            let (mu, _, label) = fit_outcome(&s, spec, false, seed)?;
            let pf = solve_param_fluc(&ev.a, &pi.ev, &mu)?;
            let fit = NuisanceFit {
                pi_hat: pf.omega.clone(),
                mu1: mu,
                mu0: None,
                provenance: Provenance {
                    propensity: "param_fluc".into(),
                    outcome: label.into(),
                    fold,
                },
            };
            let treated_pi: Vec<f64> = select(&fit.pi_hat, &s.ev_treated);
            let mut diag = Diagnostics::from_pi(&treated_pi);
            diag.epsilon = Some(pf.lambda1);
            diag.constraints.push(ConstraintRecord {
                residual: pf.foc_residual,
                scale: pf.foc_scale,
                tol: 1e-6,
            });
            (weighting_result(ev, &fit, recipe == Recipe::ParamFlucSn, diag)?, fit)
        }
    };
    Ok(FoldEstimate {
        result,
        nuisance,
        eval_rows: eval.to_vec(),
    })
}

/// Closed-form linear C-Learner. Two-arm functionals use the arm-block
/// design `[A x, (1 - A) x]` over all rows.
fn clearner_linear(
    s: &Split,
    pi: &Propensity,
    spec: &NuisanceSpec,
    riesz: &RieszSpec,
    prov: Provenance,
) -> Result<(EstimateResult, NuisanceFit)> {
    let ev = &s.ev;
    let x_ev_all = design(&ev.x, spec.intercept);
    let (c, mu1, mu0) = if riesz.is_two_arm() {
        let block = |d: &Dataset| {
            let z = design(&d.x, spec.intercept);
            let p = z.ncols();
            DMatrix::from_fn(d.n(), 2 * p, |i, j| {
                let treated = d.a[i];
                if (j < p) == treated {
                    z[(i, j % p)]
                } else {
                    0.0
                }
            })
        };
        let h = riesz_values(riesz, &pi.ev, &ev.a, &ev.x)?;
        let c = solve_constrained_ols(&block(&s.tr), &s.tr.y, &block(ev), &ev.y, &h)?;
        let crate::constrained::ConstrainedModel::Linear(m) = &c.model else {
            unreachable!("closed form returns a linear model")
        };
        let p = x_ev_all.ncols();
        let mu1: Vec<f64> = (&x_ev_all * m.coef.rows(0, p)).iter().copied().collect();
        let mu0: Vec<f64> = (&x_ev_all * m.coef.rows(p, p)).iter().copied().collect();
        (c, mu1, Some(mu0))
    } else {
        let h: Vec<f64> = s.ev_treated.iter().map(|&i| 1.0 / pi.ev[i]).collect();
        let c = solve_constrained_ols(
            &design(&s.x_tr1(), spec.intercept),
            &s.y_tr1(),
            &design(&s.x_ev1(), spec.intercept),
            &s.y_ev1(),
            &h,
        )?;
        let mu1 = c.model.predict(&x_ev_all);
        (c, mu1, None)
    };
    let fit = NuisanceFit::new(pi.ev.clone(), mu1, mu0)?.with_provenance(prov);
    let record = ConstraintRecord {
        residual: c.residual,
        scale: c.scale,
        tol: c.tol,
    };
    Ok((plug_in_result(ev, &fit, riesz, Some(record), Some(c.multiplier))?, fit))
}

/// `P_n[A Y / pi]` (or its Hajek form) with the debiased influence values of
/// the fixed outcome model under the same propensities.
fn weighting_result(ev: &Dataset, fit: &NuisanceFit, self_normalize: bool, diag: Diagnostics) -> Result<EstimateResult> {
    let n = ev.n() as f64;
    let mass: f64 = (0..ev.n()).filter(|&i| ev.a[i]).map(|i| 1.0 / fit.pi_hat[i]).sum::<f64>() / n;
    if mass == 0.0 || !mass.is_finite() {
        return Err(Error::ZeroDenominator("inverse-weight mass".into()));
    }
    let norm = if self_normalize { mass } else { 1.0 };
    let pi: Vec<f64> = fit.pi_hat.iter().map(|p| p * norm).collect();
    let psi: f64 = (0..ev.n()).filter(|&i| ev.a[i]).map(|i| ev.y[i] / pi[i]).sum::<f64>() / n;
    let influence = mmo_influence(ev, &pi, &fit.mu1);
    EstimateResult::from_influence(psi, influence, fit.pi_hat.clone(), diag)
}

/// Runs `recipe` under a fold plan (`None` for single-split mode): fold
/// estimates are averaged, influence values pooled across folds for the
/// variance, and diagnostics merged.
pub fn crossfit(
    data: &Dataset,
    folds: Option<&FoldPlan>,
    recipe: Recipe,
    spec: &NuisanceSpec,
    riesz: &RieszSpec,
    seed: u64,
) -> Result<EstimateResult> {
    spec.validate()?;
    let all: Vec<usize> = (0..data.n()).collect();
    let Some(plan) = folds else {
        return Ok(fit_fold(data, &all, &all, recipe, spec, riesz, seed, None)?.result);
    };
    if plan.assignments.len() != data.n() {
        return Err(Error::InvalidInput("fold plan does not match the dataset".into()));
    }
    let mut psis = Vec::with_capacity(plan.k);
    let mut influence = Vec::with_capacity(data.n());
    let mut pi_hat = Vec::with_capacity(data.n());
    let mut diag = Diagnostics {
        min_pi: f64::INFINITY,
        max_inv_pi: 0.0,
        ..Default::default()
    };
    let mut eps = Vec::new();
    let mut mult = Vec::new();
    for k in 0..plan.k {
        let eval = plan.fold_rows(k);
        let train = plan.complement_rows(k);
        let fold_seed = seed.wrapping_add(k as u64 * 0x9e37_79b9);
        let f = fit_fold(data, &train, &eval, recipe, spec, riesz, fold_seed, Some(k))?;
        psis.push(f.result.psi_hat);
        influence.extend_from_slice(&f.result.influence);
        pi_hat.extend_from_slice(&f.result.pi_hat);
        let d = f.result.diagnostics;
        diag.min_pi = diag.min_pi.min(d.min_pi);
        diag.max_inv_pi = diag.max_inv_pi.max(d.max_inv_pi);
        eps.extend(d.epsilon);
        mult.extend(d.multiplier);
        diag.constraints.extend(d.constraints);
    }
    diag.epsilon = (!eps.is_empty()).then(|| mean(&eps));
    diag.multiplier = (!mult.is_empty()).then(|| mean(&mult));
    EstimateResult::from_influence(mean(&psis), influence, pi_hat, diag)
}
