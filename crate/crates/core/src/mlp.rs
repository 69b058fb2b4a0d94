//! Small tanh network trained on squared loss plus a squared-constraint
//! penalty, with the output bias re-solved at every epoch end so the eval
//! constraint holds exactly.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::{mean, std_dev};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
}

/// Network `out = output_scale * w_out . h_L + theta_bias`, where
/// `h_0 = (x - input_shift) / input_scale` and `h_l = tanh(W_l h_{l-1} + b_l)`.
/// The shifts and scales are fixed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MLPParams {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub w_out: DVector<f64>,
    pub theta_bias: f64,
    pub activation: Activation,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub output_scale: f64,
}

impl MLPParams {
    pub fn input_width(&self) -> usize {
        self.input_shift.len()
    }

    /// Zero-initialized network with identity input/output transforms.
    pub fn zeros(input: usize, hidden: &[usize]) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut prev = input;
        for &w in hidden {
            weights.push(DMatrix::zeros(w, prev));
            biases.push(DVector::zeros(w));
            prev = w;
        }
        Self {
            weights,
            biases,
            w_out: DVector::zeros(prev),
            theta_bias: 0.0,
            activation: Activation::Tanh,
            input_shift: vec![0.0; input],
            input_scale: vec![1.0; input],
            output_scale: 1.0,
        }
    }

    /// Glorot-uniform weights, zero hidden biases, input standardization
    /// from `x`, output scale `sd(y)` and `theta_bias = mean(y)`.
    pub fn init(x: &DMatrix<f64>, y: &[f64], hidden: &[usize], rng: &mut ChaCha8Rng) -> Self {
        let d = x.ncols();
        let mut p = Self::zeros(d, hidden);
        for j in 0..d {
            let col: Vec<f64> = x.column(j).iter().copied().collect();
            let sd = std_dev(&col);
            p.input_shift[j] = mean(&col);
            p.input_scale[j] = if sd > 0.0 { sd } else { 1.0 };
        }
        for w in p.weights.iter_mut() {
            let bound = (6.0 / (w.nrows() + w.ncols()) as f64).sqrt();
            w.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        }
        let bound = (6.0 / (p.w_out.len() + 1) as f64).sqrt();
        p.w_out.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        let sd = std_dev(y);
        p.output_scale = if sd > 0.0 { sd } else { 1.0 };
        p.theta_bias = mean(y);
        p
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            v.extend(w.iter());
            v.extend(b.iter());
        }
        v.extend(self.w_out.iter());
        v.push(self.theta_bias);
        v
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut k = 0;
        let mut take = |dst: &mut dyn Iterator<Item = &mut f64>| {
            for v in dst {
                *v = flat[k];
                k += 1;
            }
        };
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            take(&mut w.iter_mut());
            take(&mut b.iter_mut());
        }
        take(&mut self.w_out.iter_mut());
        self.theta_bias = flat[flat.len() - 1];
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows()).map(|i| self.forward(x, i).0).collect()
    }

    /// Output and the hidden activations for one row.
    fn forward(&self, x: &DMatrix<f64>, row: usize) -> (f64, Vec<DVector<f64>>) {
        let mut h = DVector::from_fn(self.input_width(), |j, _| (x[(row, j)] - self.input_shift[j]) / self.input_scale[j]);
        let mut acts = vec![h.clone()];
        for (w, b) in self.weights.iter().zip(&self.biases) {
            h = (w * &h + b).map(f64::tanh);
            acts.push(h.clone());
        }
        (self.output_scale * self.w_out.dot(&h) + self.theta_bias, acts)
    }

    /// Accumulates `d out / d params * upstream` into `grad` (flat layout).
    fn backward(&self, acts: &[DVector<f64>], upstream: f64, grad: &mut [f64]) {
        let layers = self.weights.len();
        let mut offsets = Vec::with_capacity(layers);
        let mut k = 0;
        for (w, b) in self.weights.iter().zip(&self.biases) {
            offsets.push(k);
            k += w.len() + b.len();
        }
        let out_off = k;
        let last = &acts[layers];
        for j in 0..self.w_out.len() {
            grad[out_off + j] += upstream * self.output_scale * last[j];
        }
        grad[out_off + self.w_out.len()] += upstream;
        // delta w.r.t. the post-activation of the current layer
        let mut delta = upstream * self.output_scale * &self.w_out;
        for l in (0..layers).rev() {
            let h = &acts[l + 1];
            let pre = delta.component_mul(&h.map(|v| 1.0 - v * v));
            let w = &self.weights[l];
            let input = &acts[l];
            let off = offsets[l];
            // column-major flat layout of W_l
            for c in 0..w.ncols() {
                for r in 0..w.nrows() {
                    grad[off + c * w.nrows() + r] += pre[r] * input[c];
                }
            }
            for r in 0..w.nrows() {
                grad[off + w.len() + r] += pre[r];
            }
            delta = w.transpose() * pre;
        }
    }
}

impl crate::models::Predictor for MLPParams {
    fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        MLPParams::predict(self, x)
    }
}

/// Single-row forward pass.
pub fn mlp_forward(params: &MLPParams, x_row: &[f64]) -> Result<f64> {
    if x_row.len() != params.input_width() {
        return Err(Error::InvalidInput(format!(
            "row has {} features, network expects {}",
            x_row.len(),
            params.input_width()
        )));
    }
    let x = DMatrix::from_row_slice(1, x_row.len(), x_row);
    Ok(params.forward(&x, 0).0)
}

/// Treated rows of a split with their propensities. `n_rows` counts every
/// row of the split so `P_split` means divide by it.
#[derive(Debug, Clone, Copy)]
pub struct EvalSet<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub pi: &'a [f64],
    pub n_rows: usize,
}

impl EvalSet<'_> {
    /// `P_eval[(A / pi)(Y - f)]`.
    pub fn residual(&self, params: &MLPParams) -> f64 {
        let f = params.predict(self.x);
        (0..self.y.len()).map(|i| (self.y[i] - f[i]) / self.pi[i]).sum::<f64>() / self.n_rows as f64
    }

    /// `P_eval[A / pi]`.
    pub fn weight_mass(&self) -> f64 {
        self.pi.iter().map(|p| 1.0 / p).sum::<f64>() / self.n_rows as f64
    }
}

/// Outcome-carrying rows used for the squared-loss term.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub x: &'a DMatrix<f64>,
    pub y: &'a [f64],
    pub rows: &'a [usize],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub mse: f64,
    pub penalty: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.mse + self.penalty
    }
}

/// Objective `mean_batch (y - f)^2 + lambda * P_eval[(A / pi)(y - f)]^2` and
/// its gradient in the flat parameter layout.
pub fn loss_and_grad(params: &MLPParams, batch: Batch<'_>, eval: Option<EvalSet<'_>>, lambda: f64) -> Result<(LossParts, Vec<f64>)> {
    let mut grad = vec![0.0; params.flatten().len()];
    let m = batch.rows.len().max(1) as f64;
    let mut parts = LossParts::default();
    for &i in batch.rows {
        let (f, acts) = params.forward(batch.x, i);
        let r = batch.y[i] - f;
        parts.mse += r * r / m;
        params.backward(&acts, -2.0 * r / m, &mut grad);
    }
    if lambda > 0.0 {
        let eval = eval.ok_or_else(|| Error::InvalidInput("penalty needs an eval set".into()))?;
        if eval.y.is_empty() {
            return Err(Error::NoTreated("eval set".into()));
        }
        let passes: Vec<(f64, Vec<DVector<f64>>)> = (0..eval.y.len()).map(|j| params.forward(eval.x, j)).collect();
        let n = eval.n_rows as f64;
        let resid: f64 = passes.iter().enumerate().map(|(j, (f, _))| (eval.y[j] - f) / eval.pi[j]).sum::<f64>() / n;
        parts.penalty = lambda * resid * resid;
        for (j, (_, acts)) in passes.iter().enumerate() {
            params.backward(acts, -2.0 * lambda * resid / (eval.pi[j] * n), &mut grad);
        }
    }
    Ok((parts, grad))
}

/// Shifts `theta_bias` by `P_eval[(A/pi)(Y - f)] / P_eval[A/pi]`, returning
/// the shifted network and the shift.
pub fn bias_shift(params: &MLPParams, eval: EvalSet<'_>) -> Result<(MLPParams, f64)> {
    if eval.y.is_empty() {
        return Err(Error::NoTreated("bias shift needs treated eval rows".into()));
    }
    let shift = eval.residual(params) / eval.weight_mass();
    let mut out = params.clone();
    out.theta_bias += shift;
    Ok((out, shift))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    /// Step size relative to the outcome variance.
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            lr: 0.05,
            epochs: 100,
            batch: 32,
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.epochs == 0 || self.batch == 0 || !(self.lambda >= 0.0) {
            return Err(Error::Config("MLP config needs lr > 0, epochs >= 1, batch >= 1, lambda >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainDiagnostics {
    pub first_epoch_shift: f64,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub val_mse: Vec<f64>,
    pub last_mse_term: f64,
    pub last_penalty_term: f64,
    /// `P_eval[(A/pi)(Y - f)]` of the returned network.
    pub eval_residual: f64,
}

pub const DEFAULT_HIDDEN: [usize; 2] = [32, 32];

/// Minibatch SGD with momentum on the penalized objective; after every
/// epoch the output bias is shifted so the eval constraint holds, and the
/// shifted snapshot with the lowest validation MSE is returned.
pub fn train_clearner_mlp(
    train: (&DMatrix<f64>, &[f64]),
    val: (&DMatrix<f64>, &[f64]),
    eval: EvalSet<'_>,
    cfg: &TrainConfig,
    hidden: &[usize],
) -> Result<(MLPParams, TrainDiagnostics)> {
    cfg.validate()?;
    let (x_tr, y_tr) = train;
    if y_tr.is_empty() {
        return Err(Error::NoTreated("train split".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = MLPParams::init(x_tr, y_tr, hidden, &mut rng);
    // the penalty adds roughly lambda P_eval[A/pi]^2 to the curvature of the
    // squared loss; dividing it out keeps one step size stable across the grid
    let mass = eval.weight_mass();
    let precond = 1.0 / (params.output_scale * params.output_scale * (1.0 + cfg.lambda * mass * mass));
    let mut velocity = vec![0.0; params.flatten().len()];
    let mut order: Vec<usize> = (0..y_tr.len()).collect();
    let mut diag = TrainDiagnostics {
        best_val_mse: f64::INFINITY,
        ..Default::default()
    };
    let mut best = params.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch) {
            let batch = Batch { x: x_tr, y: y_tr, rows: chunk };
            let (parts, grad) = loss_and_grad(&params, batch, Some(eval), cfg.lambda)?;
            if !parts.total().is_finite() {
                return Err(Error::Divergence { epoch });
            }
            diag.last_mse_term = parts.mse;
            diag.last_penalty_term = parts.penalty;
            let mut flat = params.flatten();
            for k in 0..flat.len() {
                velocity[k] = cfg.momentum * velocity[k] - cfg.lr * precond * grad[k];
                flat[k] += velocity[k];
            }
            params.unflatten(&flat);
        }
        let (shifted, shift) = bias_shift(&params, eval)?;
        params = shifted;
        if epoch == 1 {
            diag.first_epoch_shift = shift;
        }
        let pred = params.predict(val.0);
        let m = pred.iter().zip(val.1).map(|(p, y)| (y - p) * (y - p)).sum::<f64>() / val.1.len().max(1) as f64;
        if !m.is_finite() || !shift.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        diag.val_mse.push(m);
        if m < diag.best_val_mse {
            diag.best_val_mse = m;
            diag.best_epoch = epoch;
            best = params.clone();
        }
    }
    diag.eval_residual = eval.residual(&best);
    Ok((best, diag))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MlpSelector {
    /// Lowest validation MSE.
    BestValMse,
    /// Smallest first-epoch |bias shift| among configs whose validation MSE
    /// is within `slack` (relative) of the best.
    SmallestShift { slack: f64 },
}

/// Index of the chosen configuration.
pub fn select_config(diags: &[TrainDiagnostics], selector: MlpSelector) -> Option<usize> {
    let best = diags
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.best_val_mse.total_cmp(&b.1.best_val_mse))?;
    match selector {
        MlpSelector::BestValMse => Some(best.0),
        MlpSelector::SmallestShift { slack } => {
            let limit = best.1.best_val_mse * (1.0 + slack);
            diags
                .iter()
                .enumerate()
                .filter(|(_, d)| d.best_val_mse <= limit)
                .min_by(|a, b| a.1.first_epoch_shift.abs().total_cmp(&b.1.first_epoch_shift.abs()))
                .map(|(i, _)| i)
        }
    }
}

/// Penalty weights `lambda_0 / P_eval[A/pi]^2` for `lambda_0` in `{0,1,4,16,64}`.
pub fn default_lambda_grid(eval: EvalSet<'_>) -> Vec<f64> {
    let mass = eval.weight_mass();
    [0.0, 1.0, 4.0, 16.0, 64.0].iter().map(|l| l / (mass * mass)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_net(seed: u64, d: usize) -> (MLPParams, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(12, d, |_, _| rng.random_range(-2.0..2.0));
        let y: Vec<f64> = (0..12).map(|_| rng.random_range(100.0..300.0)).collect();
        let mut p = MLPParams::init(&x, &y, &[5, 4], &mut rng);
        p.biases.iter_mut().for_each(|b| b.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5)));
        (p, x)
    }

    #[test]
    fn zero_weights_output_bias() {
        let mut p = MLPParams::zeros(3, &[4]);
        p.theta_bias = 7.25;
        assert_eq!(mlp_forward(&p, &[1.0, -2.0, 9.0]).unwrap(), 7.25);
        assert!(mlp_forward(&p, &[1.0]).is_err());
    }

    #[test]
    fn linear_network_is_dot_product() {
        let mut p = MLPParams::zeros(3, &[]);
        p.w_out = DVector::from_row_slice(&[0.5, -1.0, 2.0]);
        let out = mlp_forward(&p, &[2.0, 3.0, 0.25]).unwrap();
        assert_eq!(out, 0.5 * 2.0 - 3.0 + 0.5);
    }

    #[test]
    fn forward_matches_reimplementation() {
        let (p, x) = random_net(1, 3);
        for i in 0..x.nrows() {
            // straight re-evaluation from the raw arrays
            let mut h: Vec<f64> = (0..3).map(|j| (x[(i, j)] - p.input_shift[j]) / p.input_scale[j]).collect();
            for (w, b) in p.weights.iter().zip(&p.biases) {
                h = (0..w.nrows())
                    .map(|r| ((0..w.ncols()).map(|c| w[(r, c)] * h[c]).sum::<f64>() + b[r]).tanh())
                    .collect();
            }
            let oracle = p.output_scale * h.iter().zip(p.w_out.iter()).map(|(a, b)| a * b).sum::<f64>() + p.theta_bias;
            assert!((p.predict(&x)[i] - oracle).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (p, x) = random_net(2, 3);
        let y: Vec<f64> = (0..12).map(|i| 200.0 + 10.0 * x[(i, 0)]).collect();
        let pi: Vec<f64> = (0..12).map(|i| 0.2 + 0.05 * i as f64).collect();
        let rows: Vec<usize> = (0..6).collect();
        let eval = EvalSet { x: &x, y: &y, pi: &pi, n_rows: 15 };
        let batch = Batch { x: &x, y: &y, rows: &rows };
        let lambda = 0.3;
        let (_, grad) = loss_and_grad(&p, batch, Some(eval), lambda).unwrap();
        let flat = p.flatten();
        let h = 1e-5;
        for k in 0..flat.len() {
            let mut q = p.clone();
            let mut plus = flat.clone();
            plus[k] += h;
            q.unflatten(&plus);
            let fp = loss_and_grad(&q, batch, Some(eval), lambda).unwrap().0.total();
            let mut minus = flat.clone();
            minus[k] -= h;
            q.unflatten(&minus);
            let fm = loss_and_grad(&q, batch, Some(eval), lambda).unwrap().0.total();
            let fd = (fp - fm) / (2.0 * h);
            let denom = fd.abs().max(grad[k].abs()).max(1e-3);
            assert!((fd - grad[k]).abs() / denom < 1e-4, "param {k}: fd {fd} vs {}", grad[k]);
        }
    }

    #[test]
    fn zero_lambda_gradient_ignores_eval() {
        let (p, x) = random_net(3, 2);
        let y = vec![1.0; 12];
        let rows: Vec<usize> = (0..12).collect();
        let batch = Batch { x: &x, y: &y, rows: &rows };
        let pi = vec![0.5; 12];
        let eval = EvalSet { x: &x, y: &y, pi: &pi, n_rows: 12 };
        let (_, g0) = loss_and_grad(&p, batch, None, 0.0).unwrap();
        let (_, g1) = loss_and_grad(&p, batch, Some(eval), 0.0).unwrap();
        assert_eq!(g0, g1);
    }

    #[test]
    fn penalty_gradient_vanishes_on_the_constraint() {
        let (p, x) = random_net(4, 2);
        let y: Vec<f64> = (0..12).map(|i| 5.0 * x[(i, 1)]).collect();
        let pi: Vec<f64> = (0..12).map(|i| 0.3 + 0.05 * i as f64).collect();
        let eval = EvalSet { x: &x, y: &y, pi: &pi, n_rows: 12 };
        let (p, _) = bias_shift(&p, eval).unwrap();
        let rows: Vec<usize> = (0..4).collect();
        let batch = Batch { x: &x, y: &y, rows: &rows };
        let (_, g0) = loss_and_grad(&p, batch, None, 0.0).unwrap();
        let (parts, g1) = loss_and_grad(&p, batch, Some(eval), 50.0).unwrap();
        assert!(parts.penalty < 1e-20);
        let diff = g0.iter().zip(&g1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-8 * g0.iter().map(|v| v.abs()).fold(1.0, f64::max));
    }

    #[test]
    fn bias_shift_cases() {
        let (p, x) = random_net(5, 2);
        let f = p.predict(&x);
        let pi = vec![1.0; 12];
        let eval = EvalSet { x: &x, y: &f, pi: &pi, n_rows: 12 };
        assert_eq!(bias_shift(&p, eval).unwrap().1, 0.0);

        let y: Vec<f64> = f.iter().enumerate().map(|(i, v)| v + i as f64).collect();
        let eval = EvalSet { x: &x, y: &y, pi: &pi, n_rows: 12 };
        let (_, shift) = bias_shift(&p, eval).unwrap();
        assert!((shift - 5.5).abs() < 1e-12);

        let pi: Vec<f64> = (0..12).map(|i| 0.05 + 0.07 * i as f64).collect();
        let eval = EvalSet { x: &x, y: &y, pi: &pi, n_rows: 20 };
        let (q, _) = bias_shift(&p, eval).unwrap();
        let scale: f64 = y.iter().zip(&pi).map(|(v, p)| (v / p).abs()).sum::<f64>() / 20.0;
        assert!(eval.residual(&q).abs() < 1e-10 * scale);
    }

    fn toy_data(seed: u64, n: usize) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: DMatrix<f64> = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let y: Vec<f64> = (0..n).map(|i| 50.0 + 10.0 * x[(i, 0)] - 5.0 * x[(i, 1)].powi(2) + rng.random_range(-1.0..1.0)).collect();
        let pi: Vec<f64> = (0..n).map(|i| 0.1 + 0.4 * (1.0 + x[(i, 0)])).collect();
        (x, y, pi)
    }

    #[test]
    fn vanishing_steps_leave_init_plus_shift() {
        let (x, y, pi) = toy_data(1, 40);
        let eval = EvalSet { x: &x, y: &y, pi: &pi, n_rows: 40 };
        let cfg = TrainConfig {
            lr: 1e-14,
            epochs: 1,
            ..Default::default()
        };
        let (p, diag) = train_clearner_mlp((&x, &y), (&x, &y), eval, &cfg, &[8]).unwrap();
        let init = MLPParams::init(&x, &y, &[8], &mut ChaCha8Rng::seed_from_u64(cfg.seed));
        let (expect, _) = bias_shift(&init, eval).unwrap();
        let diff = p.flatten().iter().zip(expect.flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-6);
        assert!((diag.first_epoch_shift - (expect.theta_bias - init.theta_bias)).abs() < 1e-6);
    }

    #[test]
    fn training_is_deterministic_and_constraint_exact() {
        let (x, y, pi) = toy_data(2, 60);
        let eval = EvalSet { x: &x, y: &y, pi: &pi, n_rows: 70 };
        let cfg = TrainConfig {
            lambda: 1.0,
            epochs: 15,
            ..Default::default()
        };
        let (a, da) = train_clearner_mlp((&x, &y), (&x, &y), eval, &cfg, &DEFAULT_HIDDEN).unwrap();
        let (b, _) = train_clearner_mlp((&x, &y), (&x, &y), eval, &cfg, &DEFAULT_HIDDEN).unwrap();
        assert_eq!(a, b);
        let scale: f64 = y.iter().zip(&pi).map(|(v, p)| (v / p).abs()).sum::<f64>() / 70.0;
        assert!(eval.residual(&a).abs() < 1e-10 * scale);
        assert!(da.best_val_mse < da.val_mse[0] || da.best_epoch == 1);
    }

    #[test]
    fn selectors() {
        let mk = |mse: f64, shift: f64| TrainDiagnostics {
            best_val_mse: mse,
            first_epoch_shift: shift,
            ..Default::default()
        };
        let d = vec![mk(1.0, 5.0), mk(1.05, -0.5), mk(2.0, 0.0)];
        assert_eq!(select_config(&d, MlpSelector::BestValMse), Some(0));
        assert_eq!(select_config(&d, MlpSelector::SmallestShift { slack: 0.1 }), Some(1));
        assert_eq!(select_config(&[], MlpSelector::BestValMse), None);
    }
}
