use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{gen_heavy_tail, HeavyTailConfig, HEAVY_TAIL_TRUTH};
use crate::estimators::{crossfit, NuisanceSpec, PropensityClass, Recipe, RieszSpec};
use crate::linalg::{mean, quantile, variance};
use crate::{Error, Result};

/// Quantile levels reported for |error|.
pub const TAIL_LEVELS: [f64; 4] = [0.5, 0.9, 0.99, 0.995];

/// Heavy-tail simulation with known propensities, single split and an
/// intercept in the outcome regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeavyTailStudy {
    pub n: usize,
    pub replications: usize,
    pub seed_base: u64,
    pub recipes: Vec<Recipe>,
    /// Replication counts at which the running variance is recorded.
    pub checkpoints: Vec<usize>,
}

impl Default for HeavyTailStudy {
    fn default() -> Self {
        Self {
            n: 500,
            replications: 5000,
            seed_base: 0,
            recipes: vec![Recipe::Aipw, Recipe::ClearnerLinear],
            checkpoints: vec![500, 1000, 2000, 5000],
        }
    }
}

impl HeavyTailStudy {
    pub fn validate(&self) -> Result<()> {
        if self.n < 3 || self.replications < 2 || self.recipes.is_empty() {
            return Err(Error::Config("heavy-tail study needs n >= 3, replications >= 2 and recipes".into()));
        }
        if self.checkpoints.iter().any(|&c| c < 2 || c > self.replications) {
            return Err(Error::Config("checkpoints must lie in [2, replications]".into()));
        }
        Ok(())
    }

    fn spec(&self) -> NuisanceSpec {
        NuisanceSpec {
            propensity: PropensityClass::Known,
            intercept: true,
            ..NuisanceSpec::default()
        }
    }
}

/// Error profile of one estimator across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub label: String,
    pub completed: usize,
    pub failures: usize,
    /// |error| quantiles at [`TAIL_LEVELS`].
    pub quantiles: [f64; 4],
    /// `(r, variance of the first r errors)` at each checkpoint.
    pub running_variance: Vec<(usize, f64)>,
}

impl TailRow {
    fn from_errors(label: &str, errors: &[f64], failures: usize, checkpoints: &[usize]) -> Self {
        let mut abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
        abs.sort_by(f64::total_cmp);
        let running_variance = checkpoints
            .iter()
            .filter(|&&c| c <= errors.len())
            .map(|&c| (c, variance(&errors[..c])))
            .collect();
        Self {
            label: label.to_string(),
            completed: errors.len(),
            failures,
            quantiles: TAIL_LEVELS.map(|q| quantile(&abs, q)),
            running_variance,
        }
    }

    pub fn q995(&self) -> f64 {
        self.quantiles[3]
    }

    /// Running variance at the last checkpoint over that at the first.
    pub fn variance_growth(&self) -> Option<f64> {
        let first = self.running_variance.first()?.1;
        let last = self.running_variance.last()?.1;
        (first > 0.0).then(|| last / first)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeavyTailReport {
    pub n: usize,
    pub replications: usize,
    /// One row per recipe, then the oracle plug-in `mean(210 + 10 x1)`.
    pub rows: Vec<TailRow>,
    /// `q99.5(|AIPW error|) / q99.5(|linear C-Learner error|)` when both ran.
    pub tail_ratio: Option<f64>,
    /// Standard deviation of the oracle plug-in error, `10 pi / sqrt(3 n)`.
    pub oracle_sd: f64,
}

impl HeavyTailReport {
    pub fn row(&self, label: &str) -> Option<&TailRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

pub const ORACLE_LABEL: &str = "oracle_direct";

/// Seeds of one study are `seed_base + 1 ..= seed_base + replications`.
pub fn heavy_tail_diagnostic(study: &HeavyTailStudy) -> Result<HeavyTailReport> {
    study.validate()?;
    let spec = study.spec();
    let riesz = RieszSpec::MeanMissingOutcome;
    let per_rep: Vec<Result<(Vec<Option<f64>>, f64)>> = (1..=study.replications)
        .into_par_iter()
        .map(|r| {
            let seed = study.seed_base.wrapping_add(r as u64);
            let ds = gen_heavy_tail(&HeavyTailConfig {
                n: study.n,
                seed,
                full_overlap: false,
            })?;
            let errs = study
                .recipes
                .iter()
                .map(|&rc| crossfit(&ds, None, rc, &spec, &riesz, seed).ok().map(|e| e.psi_hat - HEAVY_TAIL_TRUTH))
                .collect();
            let oracle = mean(&ds.x.column(0).iter().map(|x1| 210.0 + 10.0 * x1).collect::<Vec<_>>()) - HEAVY_TAIL_TRUTH;
            Ok((errs, oracle))
        })
        .collect();
    let mut errors = vec![Vec::with_capacity(study.replications); study.recipes.len()];
    let mut failures = vec![0; study.recipes.len()];
    let mut oracle = Vec::with_capacity(study.replications);
    for r in per_rep {
        let (errs, o) = r?;
        for (k, e) in errs.into_iter().enumerate() {
            match e {
                Some(e) => errors[k].push(e),
                None => failures[k] += 1,
            }
        }
        oracle.push(o);
    }
    let mut rows: Vec<TailRow> = study
        .recipes
        .iter()
        .enumerate()
        .map(|(k, rc)| TailRow::from_errors(rc.id(), &errors[k], failures[k], &study.checkpoints))
        .collect();
    rows.push(TailRow::from_errors(ORACLE_LABEL, &oracle, 0, &study.checkpoints));
    let q = |label: &str| rows.iter().find(|r| r.label == label).map(|r| r.q995());
    let tail_ratio = match (q(Recipe::Aipw.id()), q(Recipe::ClearnerLinear.id())) {
        (Some(a), Some(c)) if c > 0.0 => Some(a / c),
        _ => None,
    };
    Ok(HeavyTailReport {
        n: study.n,
        replications: study.replications,
        rows,
        tail_ratio,
        oracle_sd: 10.0 * std::f64::consts::PI / (3.0 * study.n as f64).sqrt(),
    })
}

/// Running-variance growth over independent repetitions of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaReport {
    pub repetitions: usize,
    /// Per recipe: the growth ratio of every repetition.
    pub growth: Vec<(Recipe, Vec<f64>)>,
}

impl MetaReport {
    pub fn ratios(&self, recipe: Recipe) -> Option<&[f64]> {
        self.growth.iter().find(|(r, _)| *r == recipe).map(|(_, g)| g.as_slice())
    }

    /// Fraction of repetitions whose growth ratio exceeds `threshold`.
    pub fn fraction_above(&self, recipe: Recipe, threshold: f64) -> Option<f64> {
        let g = self.ratios(recipe)?;
        Some(g.iter().filter(|&&v| v > threshold).count() as f64 / g.len() as f64)
    }

    pub fn fraction_below(&self, recipe: Recipe, threshold: f64) -> Option<f64> {
        let g = self.ratios(recipe)?;
        Some(g.iter().filter(|&&v| v < threshold).count() as f64 / g.len() as f64)
    }
}

/// Repetition `m` reruns `study` with seeds offset by `m * replications`.
pub fn heavy_tail_meta(study: &HeavyTailStudy, repetitions: usize) -> Result<MetaReport> {
    if repetitions == 0 {
        return Err(Error::Config("meta-experiment needs at least one repetition".into()));
    }
    let mut growth: Vec<(Recipe, Vec<f64>)> = study.recipes.iter().map(|&r| (r, Vec::new())).collect();
    for m in 0..repetitions {
        let rep = heavy_tail_diagnostic(&HeavyTailStudy {
            seed_base: study.seed_base.wrapping_add((m * study.replications) as u64),
            ..study.clone()
        })?;
        for (recipe, g) in growth.iter_mut() {
            let v = rep.row(recipe.id()).and_then(|r| r.variance_growth()).unwrap_or(f64::NAN);
            g.push(v);
        }
    }
    Ok(MetaReport { repetitions, growth })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_study_shapes() {
        let study = HeavyTailStudy {
            n: 100,
            replications: 40,
            checkpoints: vec![10, 40],
            ..Default::default()
        };
        let rep = heavy_tail_diagnostic(&study).unwrap();
        assert_eq!(rep.rows.len(), 3);
        for row in &rep.rows {
            assert_eq!(row.completed + row.failures, 40);
            assert!(row.quantiles.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(row.running_variance.len(), 2);
        }
        assert!(rep.tail_ratio.unwrap() > 0.0);
    }

    #[test]
    fn growth_ratio_by_hand() {
        let errs = [1.0, -1.0, 3.0, -3.0];
        let row = TailRow::from_errors("x", &errs, 0, &[2, 4]);
        // var(1, -1) = 2, var(1, -1, 3, -3) = 20 / 3
        assert!((row.variance_growth().unwrap() - 10.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bad_checkpoints_rejected() {
        let study = HeavyTailStudy {
            replications: 10,
            checkpoints: vec![20],
            ..Default::default()
        };
        assert!(heavy_tail_diagnostic(&study).is_err());
    }
}
