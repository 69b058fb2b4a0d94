//! Gradient-boosted regression trees with a pluggable pseudo-gradient and
//! the two-stage constrained boosting procedure.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{mean, std_dev};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Binary regression tree; rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
    pub max_depth: usize,
}

impl RegressionTree {
    pub fn predict_row(&self, x: &DMatrix<f64>, row: usize) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[(row, feature)] <= threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows()).map(|i| self.predict_row(x, i)).collect()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// Greedy least-squares tree on the given rows and candidate features.
///
/// Thresholds are midpoints between consecutive distinct values; the first
/// best split found scanning features in ascending order and thresholds in
/// ascending order wins ties.
pub fn fit_tree(
    x: &DMatrix<f64>,
    target: &[f64],
    rows: &[usize],
    features: &[usize],
    max_depth: usize,
    min_leaf: usize,
) -> RegressionTree {
    let mut features = features.to_vec();
    features.sort_unstable();
    let mut nodes = Vec::new();
    grow(x, target, rows.to_vec(), &features, max_depth, min_leaf.max(1), &mut nodes);
    RegressionTree { nodes, max_depth }
}

fn grow(
    x: &DMatrix<f64>,
    target: &[f64],
    rows: Vec<usize>,
    features: &[usize],
    depth_left: usize,
    min_leaf: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    let n = rows.len();
    let total: f64 = rows.iter().map(|&i| target[i]).sum();
    let value = if n == 0 { 0.0 } else { total / n as f64 };
    nodes.push(Node::Leaf { value });
    if depth_left == 0 || n < 2 * min_leaf {
        return id;
    }
    let Some((feature, threshold)) = best_split(x, target, &rows, features, min_leaf, total) else {
        return id;
    };
    let (lrows, rrows): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[(i, feature)] <= threshold);
    let left = grow(x, target, lrows, features, depth_left - 1, min_leaf, nodes);
    let right = grow(x, target, rrows, features, depth_left - 1, min_leaf, nodes);
    nodes[id] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    id
}

fn best_split(
    x: &DMatrix<f64>,
    target: &[f64],
    rows: &[usize],
    features: &[usize],
    min_leaf: usize,
    total: f64,
) -> Option<(usize, f64)> {
    let n = rows.len();
    let base = total * total / n as f64;
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order = rows.to_vec();
    for &f in features {
        order.sort_by(|&a, &b| x[(a, f)].total_cmp(&x[(b, f)]).then(a.cmp(&b)));
        let mut left_sum = 0.0;
        for k in 0..n - 1 {
            left_sum += target[order[k]];
            let nl = k + 1;
            let nr = n - nl;
            let (v, v_next) = (x[(order[k], f)], x[(order[k + 1], f)]);
            if nl < min_leaf || nr < min_leaf || v == v_next {
                continue;
            }
            let right_sum = total - left_sum;
            let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64 - base;
            if best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, f, 0.5 * (v + v_next)));
            }
        }
    }
    let scale = rows.iter().map(|&i| target[i] * target[i]).sum::<f64>();
    best.filter(|&(g, _, _)| g > 1e-12 * scale.max(1e-300)).map(|(_, f, t)| (f, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub eta: f64,
    /// Stage-1 tree cap.
    pub max_trees_j: usize,
    /// Stage-2 tree cap.
    pub max_trees_k: usize,
    pub max_depth: usize,
    pub colsample: f64,
    pub subsample: f64,
    pub early_stop_rounds: usize,
    pub min_leaf: usize,
    pub stage2_subsample: f64,
    pub stage2_patience: usize,
    /// Stage 2 stops once `|residual| < stage2_tol * sd(y)`.
    pub stage2_tol: f64,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            eta: 0.1,
            max_trees_j: 500,
            max_trees_k: 1000,
            max_depth: 3,
            colsample: 0.8,
            subsample: 1.0,
            early_stop_rounds: 20,
            min_leaf: 5,
            stage2_subsample: 0.5,
            stage2_patience: 20,
            stage2_tol: 1e-6,
            seed: 0,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        if !(self.eta > 0.0) {
            return Err(Error::Config(format!("eta must be > 0, got {}", self.eta)));
        }
        if !frac(self.colsample) || !frac(self.subsample) || !frac(self.stage2_subsample) {
            return Err(Error::Config("sampling fractions must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    One,
    Two,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GBRTModel {
    pub base_score: f64,
    pub trees: Vec<(RegressionTree, Stage)>,
    pub eta: f64,
}

impl GBRTModel {
    pub fn constant(base_score: f64, eta: f64) -> Self {
        Self {
            base_score,
            trees: Vec::new(),
            eta,
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut out = vec![self.base_score; x.nrows()];
        for (tree, _) in &self.trees {
            for (i, o) in out.iter_mut().enumerate() {
                *o += self.eta * tree.predict_row(x, i);
            }
        }
        out
    }

    pub fn stage_count(&self, stage: Stage) -> usize {
        self.trees.iter().filter(|(_, s)| *s == stage).count()
    }
}

impl crate::models::Predictor for GBRTModel {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        GBRTModel::predict(self, x)
    }
}

/// Outcome-carrying rows for plain boosting.
#[derive(Debug, Clone, Copy)]
pub struct BoostData<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoostTrace {
    pub val_mse: Vec<f64>,
    pub best_trees: usize,
}

fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, v)| (v - p) * (v - p)).sum::<f64>() / y.len().max(1) as f64
}

fn draw(rng: &mut ChaCha8Rng, n: usize, frac: f64) -> Vec<usize> {
    let k = ((frac * n as f64).round() as usize).clamp(1.min(n), n);
    let mut v = sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}

/// Stage-1 boosting. `pseudo_gradient` receives the model so far and its
/// predictions on the training rows and returns one target per row. Trees
/// are added until `max_trees_j` or `early_stop_rounds` rounds without a
/// validation-MSE improvement; the model is cut back to the best round.
pub fn boost_fit(
    train: BoostData<'_>,
    val: BoostData<'_>,
    params: &BoostParams,
    pseudo_gradient: &mut dyn FnMut(&GBRTModel, &[f64]) -> Vec<f64>,
) -> Result<(GBRTModel, BoostTrace)> {
    params.validate()?;
    let n = train.x.nrows();
    if n == 0 || train.y.len() != n {
        return Err(Error::InvalidInput("boosting needs aligned, nonempty training rows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut model = GBRTModel::constant(mean(train.y), params.eta);
    let mut pred_tr = vec![model.base_score; n];
    let mut pred_val = vec![model.base_score; val.x.nrows()];
    let mut trace = BoostTrace {
        val_mse: vec![mse(&pred_val, val.y)],
        best_trees: 0,
    };
    let mut best = trace.val_mse[0];
    let mut stale = 0;
    let d = train.x.ncols();
    for _ in 0..params.max_trees_j {
        let target = pseudo_gradient(&model, &pred_tr);
        if target.len() != n {
            return Err(Error::InvalidInput("pseudo-gradient length mismatch".into()));
        }
        let rows = draw(&mut rng, n, params.subsample);
        let feats = draw(&mut rng, d, params.colsample);
        let tree = fit_tree(train.x, &target, &rows, &feats, params.max_depth, params.min_leaf);
        for (i, p) in pred_tr.iter_mut().enumerate() {
            *p += params.eta * tree.predict_row(train.x, i);
        }
        for (i, p) in pred_val.iter_mut().enumerate() {
            *p += params.eta * tree.predict_row(val.x, i);
        }
        model.trees.push((tree, Stage::One));
        let m = mse(&pred_val, val.y);
        trace.val_mse.push(m);
        if m < best {
            best = m;
            trace.best_trees = model.trees.len();
            stale = 0;
        } else {
            stale += 1;
            if stale >= params.early_stop_rounds {
                break;
            }
        }
    }
    model.trees.truncate(trace.best_trees);
    Ok((model, trace))
}

/// Treated rows of one split with their propensities; `n_rows` counts all
/// rows of the split so that `P_split` means divide by it.
#[derive(Debug, Clone, Copy)]
pub struct BoostSplit<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub pi: &'a [f64],
    pub n_rows: usize,
}

impl BoostSplit<'_> {
    /// `P[(A / pi)(Y - mu)]` for predictions `mu` on the treated rows.
    pub fn constraint_residual(&self, mu: &[f64]) -> f64 {
        self.y
            .iter()
            .zip(mu)
            .zip(self.pi)
            .map(|((y, m), p)| (y - m) / p)
            .sum::<f64>()
            / self.n_rows as f64
    }
}

/// Targeting fluctuation `P[(Y - mu) A / pi] / P[A / pi^2]`.
pub fn epsilon_star(a: &[bool], y: &[f64], mu: &[f64], pi: &[f64]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..a.len() {
        if a[i] {
            num += (y[i] - mu[i]) / pi[i];
            den += 1.0 / (pi[i] * pi[i]);
        }
    }
    if den == 0.0 {
        return Err(Error::ZeroDenominator("epsilon* needs treated rows".into()));
    }
    Ok(num / den)
}

fn epsilon_treated(y: &[f64], mu: &[f64], pi: &[f64]) -> Result<f64> {
    epsilon_star(&vec![true; y.len()], y, mu, pi)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstrainedBoostDiagnostics {
    pub stage1_trees: usize,
    pub stage2_trees: usize,
    pub stage2_rejected: usize,
    /// `P_eval[(A / pi)(Y - mu)]` of the returned model.
    pub residual: f64,
    /// Absolute stopping tolerance on `|residual|`.
    pub tolerance: f64,
    pub converged: bool,
    pub residual_history: Vec<f64>,
}

/// Two-stage constrained boosting.
///
/// Stage 1 boosts on train toward `(Y - mu) + eps*/pi` with `eps*` computed
/// on train, stopping early on validation MSE. Stage 2 fits trees on
/// subsampled eval rows to `eps*_eval / pi`, keeping a tree only if it
/// shrinks the eval constraint residual. Stage 2 ends when the residual
/// drops below `stage2_tol * sd(y_train)`, after `stage2_patience`
/// consecutive rejected trees, or at `max_trees_k`.
pub fn clearner_boost(
    train: BoostSplit<'_>,
    eval: BoostSplit<'_>,
    val: BoostData<'_>,
    params: &BoostParams,
) -> Result<(GBRTModel, ConstrainedBoostDiagnostics)> {
    if eval.y.is_empty() {
        return Err(Error::NoTreated("eval split".into()));
    }
    if train.y.is_empty() {
        return Err(Error::NoTreated("train split".into()));
    }
    let mut hook = |_: &GBRTModel, mu: &[f64]| -> Vec<f64> {
        let eps = epsilon_treated(train.y, mu, train.pi).unwrap_or(0.0);
        (0..mu.len()).map(|i| train.y[i] - mu[i] + eps / train.pi[i]).collect()
    };
    let (mut model, _) = boost_fit(
        BoostData {
            x: train.x,
            y: train.y,
        },
        val,
        params,
        &mut hook,
    )?;
    let mut diag = ConstrainedBoostDiagnostics {
        stage1_trees: model.trees.len(),
        tolerance: params.stage2_tol * std_dev(train.y),
        ..Default::default()
    };
    let mut mu_ev = model.predict(eval.x);
    let mut resid = eval.constraint_residual(&mu_ev);
    diag.residual_history.push(resid);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x5eed_0002);
    let n_ev = eval.y.len();
    let d = eval.x.ncols();
    let mut stale = 0;
    let mut built = 0;
    while built < params.max_trees_k && resid.abs() >= diag.tolerance && stale < params.stage2_patience {
        built += 1;
        let eps = epsilon_treated(eval.y, &mu_ev, eval.pi)?;
        let target: Vec<f64> = eval.pi.iter().map(|p| eps / p).collect();
        let rows = draw(&mut rng, n_ev, params.stage2_subsample);
        let feats = draw(&mut rng, d, params.colsample);
        let tree = fit_tree(eval.x, &target, &rows, &feats, params.max_depth, params.min_leaf);
        let cand: Vec<f64> = (0..n_ev)
            .map(|i| mu_ev[i] + params.eta * tree.predict_row(eval.x, i))
            .collect();
        let cand_resid = eval.constraint_residual(&cand);
        if cand_resid.abs() < resid.abs() {
            model.trees.push((tree, Stage::Two));
            mu_ev = cand;
            resid = cand_resid;
            diag.residual_history.push(resid);
            stale = 0;
        } else {
            diag.stage2_rejected += 1;
            stale += 1;
        }
    }
    diag.stage2_trees = model.stage_count(Stage::Two);
    diag.residual = resid;
    diag.converged = resid.abs() < diag.tolerance || params.max_trees_k == 0;
    Ok((model, diag))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn all(n: usize) -> Vec<usize> {
        (0..n).collect()
    }

    #[test]
    fn constant_target_is_single_leaf() {
        let x = DMatrix::from_fn(10, 2, |i, j| (i * (j + 1)) as f64);
        let t = fit_tree(&x, &[3.5; 10], &all(10), &[0, 1], 4, 1);
        assert_eq!(t.nodes, vec![Node::Leaf { value: 3.5 }]);
    }

    #[test]
    fn depth_zero_is_mean() {
        let x = DMatrix::from_fn(4, 1, |i, _| i as f64);
        let t = fit_tree(&x, &[1.0, 2.0, 3.0, 6.0], &all(4), &[0], 0, 1);
        assert_eq!(t.nodes, vec![Node::Leaf { value: 3.0 }]);
    }

    #[test]
    fn step_function_split_matches_exhaustive_search() {
        let xs = [0.1, 0.4, 0.2, 0.9, 0.7, 0.3, 0.8, 0.6];
        let y: Vec<f64> = xs.iter().map(|&v| if v > 0.5 { 5.0 } else { -1.0 }).collect();
        let x = DMatrix::from_column_slice(8, 1, &xs);
        let t = fit_tree(&x, &y, &all(8), &[0], 1, 1);
        let Node::Split { threshold, .. } = t.nodes[0] else { panic!("no split") };
        // oracle: every midpoint, pick minimal SSE (first on ties)
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        let sse = |thr: f64| {
            let (l, r): (Vec<f64>, Vec<f64>) = (0..8).map(|i| (xs[i], y[i])).fold((vec![], vec![]), |(mut l, mut r), (v, t)| {
                if v <= thr { l.push(t) } else { r.push(t) }
                (l, r)
            });
            let s = |v: &[f64]| { let m = mean(v); v.iter().map(|a| (a - m).powi(2)).sum::<f64>() };
            s(&l) + s(&r)
        };
        let oracle = sorted
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .min_by(|a, b| sse(*a).total_cmp(&sse(*b)))
            .unwrap();
        assert_eq!(threshold, oracle);
        assert!((0.4..0.6).contains(&threshold));
    }

    #[test]
    fn single_full_tree_interpolates() {
        let x = DMatrix::from_fn(16, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..16).map(|i| ((i * 7) % 5) as f64).collect();
        let params = BoostParams {
            eta: 1.0,
            max_trees_j: 1,
            max_depth: 10,
            min_leaf: 1,
            colsample: 1.0,
            ..Default::default()
        };
        let data = BoostData { x: &x, y: &y };
        let (m, _) = boost_fit(data, data, &params, &mut |_, mu| y.iter().zip(mu).map(|(a, b)| a - b).collect()).unwrap();
        let p = m.predict(&x);
        assert!(p.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn zero_gradient_keeps_base_score() {
        let x = DMatrix::from_fn(20, 2, |i, j| (i + j) as f64);
        let y: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let data = BoostData { x: &x, y: &y };
        let (m, trace) = boost_fit(data, data, &BoostParams::default(), &mut |_, mu| vec![0.0; mu.len()]).unwrap();
        assert!(m.trees.is_empty());
        assert_eq!(trace.best_trees, 0);
        assert_eq!(m.base_score, mean(&y));
    }

    #[test]
    fn prediction_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: DMatrix<f64> = DMatrix::from_fn(60, 3, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..60).map(|i| x[(i, 0)].sin() + x[(i, 1)]).collect();
        let data = BoostData { x: &x, y: &y };
        let params = BoostParams {
            max_trees_j: 30,
            early_stop_rounds: 100,
            ..Default::default()
        };
        let (m, _) = boost_fit(data, data, &params, &mut |_, mu| y.iter().zip(mu).map(|(a, b)| a - b).collect()).unwrap();
        let total = m.predict(&x);
        for i in 0..60 {
            let sum: f64 = m.trees.iter().map(|(t, _)| t.predict_row(&x, i)).sum();
            assert!((total[i] - (m.base_score + m.eta * sum)).abs() < 1e-12);
        }
    }

    #[test]
    fn epsilon_star_cases() {
        let a = [true, true, false];
        assert_eq!(epsilon_star(&a, &[1.0, 2.0, 9.0], &[1.0, 2.0, 0.0], &[0.3, 0.6, 0.5]).unwrap(), 0.0);
        let e = epsilon_star(&a, &[1.0, 4.0, 9.0], &[0.0, 1.0, 0.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!((e - 2.0).abs() < 1e-15);
        assert!(epsilon_star(&[false], &[1.0], &[0.0], &[0.5]).is_err());
    }

    #[test]
    fn epsilon_star_minimizes_targeting_quadratic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Vec<bool> = (0..10).map(|i| i % 3 != 0).collect();
        let y: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mu: Vec<f64> = (0..10).map(|_| rng.random_range(-5.0..5.0)).collect();
        let pi: Vec<f64> = (0..10).map(|_| rng.random_range(0.05..1.0)).collect();
        // q(e) = sum_A (r - e/pi)^2 = c0 - 2 e b + e^2 s  =>  e = b / s
        let (mut b, mut s) = (0.0, 0.0);
        for i in 0..10 {
            if a[i] {
                b += (y[i] - mu[i]) / pi[i];
                s += 1.0 / (pi[i] * pi[i]);
            }
        }
        let q = |e: f64| (0..10).filter(|&i| a[i]).map(|i| (y[i] - mu[i] - e / pi[i]).powi(2)).sum::<f64>();
        let e = epsilon_star(&a, &y, &mu, &pi).unwrap();
        assert!((e - b / s).abs() < 1e-10);
        assert!(q(e) <= q(e + 1e-6) && q(e) <= q(e - 1e-6));
    }

    #[test]
    fn unit_propensity_stage_two_zeroes_mean_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = DMatrix::from_fn(80, 2, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..80).map(|i| 3.0 * x[(i, 0)] + rng.random_range(-1.0..1.0)).collect();
        let pi = vec![1.0; 80];
        let split = BoostSplit { x: &x, y: &y, pi: &pi, n_rows: 80 };
        let (m, diag) = clearner_boost(split, split, BoostData { x: &x, y: &y }, &BoostParams::default()).unwrap();
        let mu = m.predict(&x);
        let r = mean(&y) - mean(&mu);
        assert!(r.abs() < 0.05 * std_dev(&y));
        assert!(diag.residual.abs() <= diag.tolerance);
        // accepted stage-2 trees never increase the residual
        assert!(diag.residual_history.windows(2).all(|w| w[1].abs() <= w[0].abs()));
    }

    #[test]
    fn zero_stage_two_cap_is_lagrangian_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = DMatrix::from_fn(60, 2, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..60).map(|i| x[(i, 0)] + rng.random_range(-0.5..0.5)).collect();
        let pi: Vec<f64> = (0..60).map(|_| rng.random_range(0.2..1.0)).collect();
        let split = BoostSplit { x: &x, y: &y, pi: &pi, n_rows: 60 };
        let params = BoostParams {
            max_trees_k: 0,
            ..Default::default()
        };
        let (m, diag) = clearner_boost(split, split, BoostData { x: &x, y: &y }, &params).unwrap();
        assert_eq!(diag.stage2_trees, 0);
        assert!(m.trees.iter().all(|(_, s)| *s == Stage::One));
    }
}
