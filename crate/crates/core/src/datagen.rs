//! Synthetic data-generating processes, CSV ingestion and fold plans.

use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::linalg::{logit, select, select_rows, sigmoid};
use crate::{Error, Result};

/// Population mean of the Kang–Schafer outcome, `E[Y] = 210`.
pub const KS_TRUTH: f64 = 210.0;

/// Population mean of the heavy-tail outcome law `210 + 10 x1 + eps`.
pub const HEAVY_TAIL_TRUTH: f64 = 210.0;

/// Deterministic generator for one (seed, stream) pair. Replication `r` of an
/// experiment uses stream `r`, so it can be regenerated in isolation.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Immutable observation table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Covariates, `n x d`.
    pub x: DMatrix<f64>,
    /// Treatment / observation indicator.
    pub a: Vec<bool>,
    /// Outcome; only meaningful where `a` is set for missing-outcome tasks.
    pub y: Vec<f64>,
    /// True propensity `P(A = 1 | X)` when known.
    pub true_pi: Option<Vec<f64>>,
    /// Population value of the estimand when known.
    pub truth: Option<f64>,
}

impl Dataset {
    pub fn new(
        x: DMatrix<f64>,
        a: Vec<bool>,
        y: Vec<f64>,
        true_pi: Option<Vec<f64>>,
        truth: Option<f64>,
    ) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::InvalidInput("dataset must have at least one row".into()));
        }
        if a.len() != n || y.len() != n {
            return Err(Error::InvalidInput(format!(
                "row count mismatch: x has {n}, a has {}, y has {}",
                a.len(),
                y.len()
            )));
        }
        if let Some((i, j)) = (0..n)
            .flat_map(|i| (0..x.ncols()).map(move |j| (i, j)))
            .find(|&(i, j)| !x[(i, j)].is_finite())
        {
            return Err(Error::InvalidValue {
                row: i + 1,
                column: format!("x{}", j + 1),
                reason: "non-finite covariate".into(),
            });
        }
        if let Some(pi) = &true_pi {
            if pi.len() != n {
                return Err(Error::InvalidInput("true_pi length mismatch".into()));
            }
            if let Some(i) = pi.iter().position(|&p| !(p > 0.0 && p <= 1.0)) {
                return Err(Error::InvalidValue {
                    row: i + 1,
                    column: "pi".into(),
                    reason: format!("propensity {} outside (0, 1]", pi[i]),
                });
            }
        }
        Ok(Self {
            x,
            a,
            y,
            true_pi,
            truth,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Treatment indicator as 0/1 reals.
    pub fn a_f64(&self) -> Vec<f64> {
        self.a.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect()
    }

    pub fn n_treated(&self) -> usize {
        self.a.iter().filter(|&&t| t).count()
    }

    pub fn treated_rows(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.a[i]).collect()
    }

    /// Rows `rows` in the given order; the truth is carried over.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: select_rows(&self.x, rows),
            a: select(&self.a, rows),
            y: select(&self.y, rows),
            true_pi: self.true_pi.as_ref().map(|p| select(p, rows)),
            truth: self.truth,
        }
    }

    /// SHA-256 over shape, covariates, treatment and outcome bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.d() as u64).to_le_bytes());
        for v in self.x.iter() {
            h.update(v.to_bits().to_le_bytes());
        }
        for &t in &self.a {
            h.update([t as u8]);
        }
        for v in &self.y {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Writes `x1..xd,a,y[,pi]` with full float precision.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=self.d()).map(|j| format!("x{j}")).collect();
        header.push("a".into());
        header.push("y".into());
        if self.true_pi.is_some() {
            header.push("pi".into());
        }
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = (0..self.d()).map(|j| format!("{:?}", self.x[(i, j)])).collect();
            rec.push(if self.a[i] { "1" } else { "0" }.into());
            rec.push(format!("{:?}", self.y[i]));
            if let Some(pi) = &self.true_pi {
                rec.push(format!("{:?}", pi[i]));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Kang–Schafer generator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsConfig {
    pub n: usize,
    /// Logit scaling; 0 gives constant propensity 1/2, 1 is the original design.
    pub c: f64,
    /// Emit the four nonlinear transforms instead of the latent normals.
    pub misspecified: bool,
    /// Relabel `A <- 1 - A` so the other arm's outcomes are observed.
    pub flipped: bool,
    pub seed: u64,
}

impl Default for KsConfig {
    fn default() -> Self {
        Self {
            n: 200,
            c: 1.0,
            misspecified: true,
            flipped: false,
            seed: 0,
        }
    }
}

impl KsConfig {
    fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config(format!("n must be at least 2, got {}", self.n)));
        }
        if !(self.c >= 0.0) || !self.c.is_finite() {
            return Err(Error::Config(format!("c must be finite and >= 0, got {}", self.c)));
        }
        Ok(())
    }
}

/// Kang–Schafer design with the overlap-scaling parameter `c`.
pub fn gen_kang_schafer(cfg: &KsConfig) -> Result<Dataset> {
    gen_kang_schafer_with(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

/// Same as [`gen_kang_schafer`] but drawing from a caller-supplied stream.
pub fn gen_kang_schafer_with<R: Rng>(cfg: &KsConfig, rng: &mut R) -> Result<Dataset> {
    cfg.validate()?;
    let n = cfg.n;
    let mut x = DMatrix::zeros(n, 4);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut pi = Vec::with_capacity(n);
    for i in 0..n {
        let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let eps: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.random();
        y.push(210.0 + 27.4 * z[0] + 13.7 * (z[1] + z[2] + z[3]) + eps);
        let p = sigmoid(cfg.c * (-z[0] + 0.5 * z[1] - 0.25 * z[2] - 0.1 * z[3]));
        let treated = u < p;
        if cfg.flipped {
            a.push(!treated);
            pi.push(1.0 - p);
        } else {
            a.push(treated);
            pi.push(p);
        }
        let cov = if cfg.misspecified {
            [
                (z[0] / 2.0).exp(),
                z[1] / (1.0 + z[0].exp()) + 10.0,
                (z[0] * z[2] / 25.0 + 0.6).powi(3),
                (z[1] + z[3] + 20.0).powi(2),
            ]
        } else {
            z
        };
        for (j, v) in cov.into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    // Y does not depend on A, so the estimand is E[Y] for either arm.
    Dataset::new(x, a, y, Some(pi), Some(KS_TRUTH))
}

/// Heavy-tail inverse-propensity design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeavyTailConfig {
    pub n: usize,
    pub seed: u64,
    /// Force `pi = 1` on every row (all rows treated).
    #[serde(default)]
    pub full_overlap: bool,
}

/// `pi ~ Uniform(0, 1)`, `x1 = logit(pi)`, `Y = 210 + 10 x1 + eps`.
///
/// `E[1 / pi]` diverges, so inverse-weighted terms have infinite variance
/// while `Var(Y | X, A = 1) = 1`.
pub fn gen_heavy_tail(cfg: &HeavyTailConfig) -> Result<Dataset> {
    gen_heavy_tail_with(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

pub fn gen_heavy_tail_with<R: Rng>(cfg: &HeavyTailConfig, rng: &mut R) -> Result<Dataset> {
    if cfg.n < 2 {
        return Err(Error::Config(format!("n must be at least 2, got {}", cfg.n)));
    }
    let n = cfg.n;
    let mut x = DMatrix::zeros(n, 1);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut pi = Vec::with_capacity(n);
    for i in 0..n {
        let p = loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                break u;
            }
        };
        let eps: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.random();
        let x1 = logit(p);
        x[(i, 0)] = x1;
        y.push(210.0 + 10.0 * x1 + eps);
        let p = if cfg.full_overlap { 1.0 } else { p };
        a.push(u < p);
        pi.push(p);
    }
    Dataset::new(x, a, y, Some(pi), Some(HEAVY_TAIL_TRUTH))
}

/// Reads `x1..xd, a, y[, pi]` by header name; covariates are ordered by their
/// numeric suffix.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let a_col = find("a").ok_or_else(|| Error::MissingColumn("a".into()))?;
    let y_col = find("y").ok_or_else(|| Error::MissingColumn("y".into()))?;
    let pi_col = find("pi");
    let mut x_cols: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(pos, h)| {
            let h = h.to_ascii_lowercase();
            h.strip_prefix('x')
                .and_then(|s| s.parse::<usize>().ok())
                .map(|k| (k, pos))
        })
        .collect();
    x_cols.sort();
    if x_cols.is_empty() {
        return Err(Error::MissingColumn("x1".into()));
    }
    for (expect, &(k, _)) in (1..).zip(&x_cols) {
        if k != expect {
            return Err(Error::MissingColumn(format!("x{expect}")));
        }
    }

    let d = x_cols.len();
    let mut xs = Vec::new();
    let mut a = Vec::new();
    let mut y = Vec::new();
    let mut pi = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + 1;
        let parse = |pos: usize, name: &str| -> Result<f64> {
            let raw = rec.get(pos).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| Error::InvalidValue {
                row,
                column: name.to_string(),
                reason: format!("cannot parse `{raw}` as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::InvalidValue {
                    row,
                    column: name.to_string(),
                    reason: "non-finite value".into(),
                });
            }
            Ok(v)
        };
        for &(k, pos) in &x_cols {
            xs.push(parse(pos, &format!("x{k}"))?);
        }
        let av = parse(a_col, "a")?;
        a.push(if av == 1.0 {
            true
        } else if av == 0.0 {
            false
        } else {
            return Err(Error::InvalidValue {
                row,
                column: "a".into(),
                reason: format!("treatment must be 0 or 1, got {av}"),
            });
        });
        y.push(parse(y_col, "y")?);
        if let Some(pc) = pi_col {
            pi.push(parse(pc, "pi")?);
        }
    }
    let n = a.len();
    if n == 0 {
        return Err(Error::InvalidInput("csv has no data rows".into()));
    }
    let x = DMatrix::from_row_slice(n, d, &xs);
    Dataset::new(x, a, y, pi_col.map(|_| pi), None)
}

/// Partition of row indices into `k` evaluation folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub assignments: Vec<usize>,
    pub k: usize,
}

impl FoldPlan {
    pub fn fold_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    /// Rows outside `fold`, i.e. its training complement.
    pub fn complement_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &f in &self.assignments {
            s[f] += 1;
        }
        s
    }
}

/// Near-even random partition; fold sizes differ by at most one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    make_folds_with(n, k, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn make_folds_with<R: Rng>(n: usize, k: usize, rng: &mut R) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("fold count must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidInput(format!("fold count {k} exceeds row count {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut assignments = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        assignments[row] = pos % k;
    }
    Ok(FoldPlan { assignments, k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::mean;

    #[test]
    fn ks_zero_scaling_gives_half_propensity() {
        let ds = gen_kang_schafer(&KsConfig {
            n: 50,
            c: 0.0,
            ..Default::default()
        })
        .unwrap();
        assert!(ds.true_pi.unwrap().iter().all(|&p| p == 0.5));
    }

    #[test]
    fn ks_truth_and_outcome_mean() {
        let ds = gen_kang_schafer(&KsConfig {
            n: 200_000,
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(ds.truth, Some(210.0));
        assert!((mean(&ds.y) - 210.0).abs() < 0.3);
    }

    #[test]
    fn ks_misspecified_shares_treatment_and_outcome_streams() {
        let base = KsConfig {
            n: 300,
            seed: 11,
            ..Default::default()
        };
        let mis = gen_kang_schafer(&base).unwrap();
        let wel = gen_kang_schafer(&KsConfig {
            misspecified: false,
            ..base
        })
        .unwrap();
        assert_eq!(mis.a, wel.a);
        assert_eq!(mis.y, wel.y);
        assert_eq!(mis.true_pi, wel.true_pi);
        assert_ne!(mis.x, wel.x);
    }

    #[test]
    fn ks_flip_relabels_treatment() {
        let base = KsConfig {
            n: 100,
            seed: 5,
            ..Default::default()
        };
        let orig = gen_kang_schafer(&base).unwrap();
        let flip = gen_kang_schafer(&KsConfig { flipped: true, ..base }).unwrap();
        assert!(orig.a.iter().zip(&flip.a).all(|(a, b)| a != b));
        let (p0, p1) = (orig.true_pi.unwrap(), flip.true_pi.unwrap());
        assert!(p0.iter().zip(&p1).all(|(a, b)| (a + b - 1.0).abs() < 1e-15));
    }

    #[test]
    fn heavy_tail_is_deterministic() {
        let cfg = HeavyTailConfig {
            n: 64,
            seed: 9,
            full_overlap: false,
        };
        let a = gen_heavy_tail(&cfg).unwrap();
        let b = gen_heavy_tail(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn heavy_tail_full_overlap_treats_everyone() {
        let ds = gen_heavy_tail(&HeavyTailConfig {
            n: 40,
            seed: 1,
            full_overlap: true,
        })
        .unwrap();
        assert_eq!(ds.n_treated(), 40);
    }

    #[test]
    fn folds_are_near_even() {
        let p = make_folds(10, 2, 1).unwrap();
        assert_eq!(p.sizes(), vec![5, 5]);
        let mut s = make_folds(7, 3, 4).unwrap().sizes();
        s.sort();
        assert_eq!(s, vec![2, 2, 3]);
        assert_eq!(make_folds(7, 3, 4).unwrap(), make_folds(7, 3, 4).unwrap());
        assert!(make_folds(3, 4, 0).is_err());
    }

    #[test]
    fn dataset_rejects_non_finite_covariates() {
        let x = DMatrix::from_row_slice(2, 1, &[1.0, f64::NAN]);
        let err = Dataset::new(x, vec![true, false], vec![1.0, 0.0], None, None).unwrap_err();
        assert!(matches!(err, Error::InvalidValue { row: 2, .. }));
    }
}
