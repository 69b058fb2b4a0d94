use serde::{Deserialize, Serialize};

use crate::gbrt::{boost_fit, BoostData, BoostParams, GBRTModel};
use crate::{Error, Result};

/// Index and score of the lowest-scoring candidate; the earliest candidate
/// wins ties. Candidates whose fit fails are skipped unless all fail.
pub fn select_by_score<T>(grid: &[T], mut score: impl FnMut(&T) -> Result<f64>) -> Result<(usize, f64)> {
    if grid.is_empty() {
        return Err(Error::Config("search grid is empty".into()));
    }
    let mut best: Option<(usize, f64)> = None;
    let mut last_err = None;
    for (i, cand) in grid.iter().enumerate() {
        match score(cand) {
            Ok(s) if s.is_finite() => {
                if best.is_none_or(|(_, b)| s < b) {
                    best = Some((i, s));
                }
            }
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    match (best, last_err) {
        (Some(b), _) => Ok(b),
        (None, Some(e)) => Err(e),
        (None, None) => Err(Error::NonConvergence {
            what: "grid search".into(),
            iterations: grid.len(),
            residual: f64::NAN,
        }),
    }
}

/// Plain squared-loss boosting for every grid entry; returns the entry with
/// the lowest best-round validation MSE.
pub fn grid_search_gbrt(train: BoostData<'_>, val: BoostData<'_>, grid: &[BoostParams]) -> Result<BoostParams> {
    let (i, _) = select_by_score(grid, |p| {
        let mut target = |_: &GBRTModel, pred: &[f64]| -> Vec<f64> { train.y.iter().zip(pred).map(|(y, f)| y - f).collect() };
        let (_, trace) = boost_fit(train, val, p, &mut target)?;
        Ok(trace.val_mse[trace.best_trees])
    })?;
    Ok(grid[i])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPreset {
    /// Learning rate {0.05, 0.1}, depth 3, column subsample 0.8, 500 trees.
    #[default]
    Desk,
    /// Learning rate {0.01, 0.05, 0.1, 0.2} x column subsample {0.5, 0.8, 1}
    /// x depth {3, 4, 5}, 2000 trees.
    Paper,
    /// The explicit value lists below.
    Custom,
}

/// Boosting grid as value lists expanded in (learning rate, column
/// subsample, depth) order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbrtGrid {
    pub preset: GridPreset,
    pub eta: Vec<f64>,
    pub colsample: Vec<f64>,
    pub max_depth: Vec<usize>,
    /// Settings shared by every candidate (tree caps, patience, ...).
    pub base: BoostParams,
}

impl Default for GbrtGrid {
    fn default() -> Self {
        Self {
            preset: GridPreset::Desk,
            eta: vec![],
            colsample: vec![],
            max_depth: vec![],
            base: BoostParams::default(),
        }
    }
}

impl GbrtGrid {
    pub fn desk() -> Self {
        Self::default()
    }

    pub fn paper() -> Self {
        Self {
            preset: GridPreset::Paper,
            base: BoostParams {
                max_trees_j: 2000,
                ..BoostParams::default()
            },
            ..Self::default()
        }
    }

    pub fn expand(&self) -> Vec<BoostParams> {
        let (eta, col, depth): (Vec<f64>, Vec<f64>, Vec<usize>) = match self.preset {
            GridPreset::Desk => (vec![0.05, 0.1], vec![0.8], vec![3]),
            GridPreset::Paper => (vec![0.01, 0.05, 0.1, 0.2], vec![0.5, 0.8, 1.0], vec![3, 4, 5]),
            GridPreset::Custom => (self.eta.clone(), self.colsample.clone(), self.max_depth.clone()),
        };
        let mut out = Vec::with_capacity(eta.len() * col.len() * depth.len());
        for &e in &eta {
            for &c in &col {
                for &d in &depth {
                    out.push(BoostParams {
                        eta: e,
                        colsample: c,
                        max_depth: d,
                        ..self.base
                    });
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn paper_grid_has_36_candidates() {
        let g = GbrtGrid::paper().expand();
        assert_eq!(g.len(), 36);
        assert!(g.iter().all(|p| p.max_trees_j == 2000));
        assert_eq!(GbrtGrid::desk().expand().len(), 2);
    }

    #[test]
    fn singleton_grid_returns_its_element() {
        let x = DMatrix::from_fn(30, 1, |i, _| i as f64);
        let y: Vec<f64> = (0..30).map(|i| (i % 7) as f64).collect();
        let p = BoostParams {
            eta: 0.3,
            max_trees_j: 20,
            ..Default::default()
        };
        let d = BoostData { x: &x, y: &y };
        assert_eq!(grid_search_gbrt(d, d, &[p]).unwrap(), p);
    }

    #[test]
    fn deep_trees_win_on_an_interaction() {
        // y = 1{x1 > 0.5 and x2 > 0.5}; depth-1 stumps cannot express the product
        let n = 200;
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { (i % 10) as f64 / 10.0 } else { (i / 10) as f64 / 20.0 });
        let y: Vec<f64> = (0..n).map(|i| if x[(i, 0)] > 0.5 && x[(i, 1)] > 0.5 { 10.0 } else { 0.0 }).collect();
        let base = BoostParams {
            eta: 0.5,
            max_trees_j: 3,
            colsample: 1.0,
            min_leaf: 1,
            ..Default::default()
        };
        let stump = BoostParams { max_depth: 1, ..base };
        let deep = BoostParams { max_depth: 3, ..base };
        let d = BoostData { x: &x, y: &y };
        assert_eq!(grid_search_gbrt(d, d, &[stump, deep]).unwrap(), deep);
    }

    #[test]
    fn ties_keep_grid_order() {
        let (i, s) = select_by_score(&[3.0, 1.0, 1.0], |v| Ok(*v)).unwrap();
        assert_eq!((i, s), (1, 1.0));
        assert!(select_by_score::<f64>(&[], |v| Ok(*v)).is_err());
    }
}
