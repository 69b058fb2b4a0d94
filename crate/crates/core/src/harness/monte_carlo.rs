use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DgpSpec, ExperimentConfig};
use crate::datagen::Dataset;
use crate::estimators::{crossfit, EstimateResult, Recipe};
use crate::linalg::{mean, quantile, std_dev};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// One recipe on one replication dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub dataset_hash: String,
    pub recipe: Recipe,
    pub status: RunStatus,
    pub psi_hat: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub truth: f64,
    pub max_residual: f64,
    pub min_pi: f64,
    pub max_inv_pi: f64,
    pub message: String,
}

impl ReplicationRecord {
    pub fn error(&self) -> f64 {
        self.psi_hat - self.truth
    }

    pub fn covers(&self) -> bool {
        self.ci_low <= self.truth && self.truth <= self.ci_high
    }

    pub fn is_ok(&self) -> bool {
        self.status == RunStatus::Ok
    }
}

/// A Monte-Carlo mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: f64,
    pub se: f64,
}

impl Metric {
    const NAN: Metric = Metric { value: f64::NAN, se: f64::NAN };

    /// Sample mean with `sd / sqrt(m)`.
    pub fn of_mean(v: &[f64]) -> Self {
        if v.is_empty() {
            return Self::NAN;
        }
        let se = if v.len() > 1 { std_dev(v) / (v.len() as f64).sqrt() } else { 0.0 };
        Self { value: mean(v), se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeSummary {
    pub recipe: Recipe,
    /// Successful replications the metrics are computed over.
    pub completed: usize,
    pub failures: usize,
    /// Successful replications with |error| above the configured threshold.
    pub extremes: usize,
    pub bias: Metric,
    pub mae: Metric,
    pub rmse: Metric,
    pub median_ae: Metric,
    pub coverage: Metric,
}

/// Per-dataset statistics of the estimated propensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropensityStats {
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    /// Mean of the smallest 5% of propensities.
    pub cvar_pi: f64,
    /// Mean of the largest 5% of inverse propensities.
    pub cvar_inv_pi: f64,
}

impl PropensityStats {
    pub fn of(pi: &[f64]) -> Option<Self> {
        if pi.is_empty() {
            return None;
        }
        let mut s = pi.to_vec();
        s.sort_by(f64::total_cmp);
        let k = ((0.05 * s.len() as f64).ceil() as usize).max(1);
        Some(Self {
            sd: if s.len() > 1 { std_dev(&s) } else { 0.0 },
            min: s[0],
            max: s[s.len() - 1],
            cvar_pi: mean(&s[..k]),
            cvar_inv_pi: s[..k].iter().map(|p| 1.0 / p).sum::<f64>() / k as f64,
        })
    }
}

/// Replication averages of [`PropensityStats`], with their medians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropensitySummary {
    pub source: Recipe,
    pub sd: Metric,
    pub min: Metric,
    pub max: Metric,
    pub cvar_pi: Metric,
    pub cvar_inv_pi: Metric,
    /// Median over replications of each statistic; the per-dataset
    /// extremes are heavily skewed, so these are the stable summaries.
    pub median: PropensityStats,
}

impl PropensitySummary {
    pub fn of(source: Recipe, stats: &[PropensityStats]) -> Self {
        let col = |f: fn(&PropensityStats) -> f64| stats.iter().map(f).collect::<Vec<_>>();
        let med = |f: fn(&PropensityStats) -> f64| {
            let mut v = col(f);
            v.sort_by(f64::total_cmp);
            quantile(&v, 0.5)
        };
        Self {
            source,
            sd: Metric::of_mean(&col(|s| s.sd)),
            min: Metric::of_mean(&col(|s| s.min)),
            max: Metric::of_mean(&col(|s| s.max)),
            cvar_pi: Metric::of_mean(&col(|s| s.cvar_pi)),
            cvar_inv_pi: Metric::of_mean(&col(|s| s.cvar_inv_pi)),
            median: PropensityStats {
                sd: med(|s| s.sd),
                min: med(|s| s.min),
                max: med(|s| s.max),
                cvar_pi: med(|s| s.cvar_pi),
                cvar_inv_pi: med(|s| s.cvar_inv_pi),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub name: String,
    pub replications: usize,
    pub summaries: Vec<RecipeSummary>,
    pub propensity: Option<PropensitySummary>,
    pub raw: Vec<ReplicationRecord>,
}

/// Metrics of one recipe from its raw records. Failed records only count
/// toward `failures`.
pub fn summarize_recipe(recipe: Recipe, records: &[&ReplicationRecord], extreme_threshold: f64) -> RecipeSummary {
    let ok: Vec<&ReplicationRecord> = records.iter().copied().filter(|r| r.is_ok()).collect();
    let err: Vec<f64> = ok.iter().map(|r| r.error()).collect();
    let abs: Vec<f64> = err.iter().map(|e| e.abs()).collect();
    let sq: Vec<f64> = err.iter().map(|e| e * e).collect();
    let m = ok.len() as f64;
    let mse = Metric::of_mean(&sq);
    let rmse_value = mse.value.sqrt();
    let rmse = Metric {
        value: rmse_value,
        // delta method on sqrt
        se: if rmse_value > 0.0 { mse.se / (2.0 * rmse_value) } else { 0.0 },
    };
    let median_ae = if abs.is_empty() {
        Metric::NAN
    } else {
        let mut sorted = abs.clone();
        sorted.sort_by(f64::total_cmp);
        let sd = if sorted.len() > 1 { std_dev(&sorted) } else { 0.0 };
        Metric {
            value: quantile(&sorted, 0.5),
            se: (std::f64::consts::PI / 2.0).sqrt() * sd / m.sqrt(),
        }
    };
    let coverage = if ok.is_empty() {
        Metric::NAN
    } else {
        let c = ok.iter().filter(|r| r.covers()).count() as f64 / m;
        Metric {
            value: c,
            se: (c * (1.0 - c) / m).sqrt(),
        }
    };
    RecipeSummary {
        recipe,
        completed: ok.len(),
        failures: records.len() - ok.len(),
        extremes: abs.iter().filter(|&&e| e > extreme_threshold).count(),
        bias: Metric::of_mean(&err),
        mae: Metric::of_mean(&abs),
        rmse,
        median_ae,
        coverage,
    }
}

/// Per-recipe summaries in `recipes` order.
pub fn summarize(raw: &[ReplicationRecord], recipes: &[Recipe], extreme_threshold: f64) -> Vec<RecipeSummary> {
    recipes
        .iter()
        .map(|&recipe| {
            let rows: Vec<&ReplicationRecord> = raw.iter().filter(|r| r.recipe == recipe).collect();
            summarize_recipe(recipe, &rows, extreme_threshold)
        })
        .collect()
}

/// Recipe whose propensities describe the dataset's overlap: the first one
/// that uses the fitted propensity model unchanged.
fn propensity_source(recipes: &[Recipe]) -> Option<Recipe> {
    recipes.iter().copied().find(|r| {
        !matches!(
            r,
            Recipe::DualClearner | Recipe::DualClearnerSn | Recipe::ParamFluc | Recipe::ParamFlucSn
        )
    })
}

fn record(rep: usize, seed: u64, hash: &str, recipe: Recipe, truth: f64, res: &Result<EstimateResult>) -> ReplicationRecord {
    match res {
        Ok(e) => ReplicationRecord {
            replication: rep,
            seed,
            dataset_hash: hash.to_string(),
            recipe,
            status: RunStatus::Ok,
            psi_hat: e.psi_hat,
            variance: e.variance,
            ci_low: e.ci_low,
            ci_high: e.ci_high,
            truth,
            max_residual: e.diagnostics.max_relative_residual().unwrap_or(f64::NAN),
            min_pi: e.diagnostics.min_pi,
            max_inv_pi: e.diagnostics.max_inv_pi,
            message: String::new(),
        },
        Err(err) => ReplicationRecord {
            replication: rep,
            seed,
            dataset_hash: hash.to_string(),
            recipe,
            status: RunStatus::Failed,
            psi_hat: f64::NAN,
            variance: f64::NAN,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
            truth,
            max_residual: f64::NAN,
            min_pi: f64::NAN,
            max_inv_pi: f64::NAN,
            message: err.to_string(),
        },
    }
}

/// Fold-plan seed of a replication, decorrelated from the data seed.
pub fn fold_seed(seed: u64) -> u64 {
    seed ^ 0x5851_f42d_4c95_7f2d
}

/// Runs every recipe on `ds`; all recipes share one fold plan.
pub fn run_replication(cfg: &ExperimentConfig, rep: usize, seed: u64, ds: &Dataset) -> Result<(Vec<ReplicationRecord>, Option<PropensityStats>)> {
    let spec = cfg.nuisance_spec();
    let plan = cfg.split.plan(ds.n(), fold_seed(seed))?;
    let truth = ds.truth.unwrap_or(f64::NAN);
    let hash = ds.fingerprint();
    let source = propensity_source(&cfg.recipes);
    let mut records = Vec::with_capacity(cfg.recipes.len());
    let mut stats = None;
    for &recipe in &cfg.recipes {
        let res = crossfit(ds, plan.as_ref(), recipe, &spec, &cfg.estimand, seed);
        if Some(recipe) == source {
            if let Ok(e) = &res {
                stats = PropensityStats::of(&e.pi_hat);
            }
        }
        records.push(record(rep, seed, &hash, recipe, truth, &res));
    }
    Ok((records, stats))
}

/// Replication `r` (1-based) uses dataset seed `seed_base + r`. Recipe
/// failures are recorded, not raised; only invalid configs and data
/// generation failures abort the run.
pub fn run_monte_carlo(cfg: &ExperimentConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let fixed = match &cfg.dgp {
        DgpSpec::Csv { .. } => Some(cfg.dgp.generate(cfg.n, cfg.seed_base)?),
        _ => None,
    };
    let per_rep: Vec<Result<(Vec<ReplicationRecord>, Option<PropensityStats>)>> = (1..=cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let seed = cfg.seed_base.wrapping_add(rep as u64);
            let ds = match &fixed {
                Some(ds) => ds.clone(),
                None => cfg.dgp.generate(cfg.n, seed)?,
            };
            run_replication(cfg, rep, seed, &ds)
        })
        .collect();
    let mut raw = Vec::with_capacity(cfg.replications * cfg.recipes.len());
    let mut stats = Vec::new();
    for r in per_rep {
        let (records, s) = r?;
        raw.extend(records);
        stats.extend(s);
    }
    let propensity = propensity_source(&cfg.recipes)
        .filter(|_| !stats.is_empty())
        .map(|src| PropensitySummary::of(src, &stats));
    Ok(SimulationReport {
        name: cfg.name.clone(),
        replications: cfg.replications,
        summaries: summarize(&raw, &cfg.recipes, cfg.extreme_threshold),
        propensity,
        raw,
    })
}

impl SimulationReport {
    pub fn summary(&self, recipe: Recipe) -> Result<&RecipeSummary> {
        self.summaries
            .iter()
            .find(|s| s.recipe == recipe)
            .ok_or_else(|| Error::Config(format!("recipe `{recipe}` is not part of report `{}`", self.name)))
    }
}
