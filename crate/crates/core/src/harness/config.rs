use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::grid::GbrtGrid;
use crate::datagen::{gen_heavy_tail, gen_kang_schafer, load_csv, Dataset, HeavyTailConfig, KsConfig};
use crate::estimators::{MlpSettings, NuisanceSpec, OutcomeClass, PropensityClass, Recipe, RieszSpec, SplitMode};
use crate::{Error, Result};

/// Source of the replication datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DgpSpec {
    KangSchafer {
        #[serde(default = "one")]
        c: f64,
        #[serde(default = "yes")]
        misspecified: bool,
        #[serde(default)]
        flipped: bool,
    },
    HeavyTail {
        #[serde(default)]
        full_overlap: bool,
    },
    /// A fixed file, reused by every replication.
    Csv { path: PathBuf, truth: Option<f64> },
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

impl DgpSpec {
    /// Dataset of replication seed `seed`.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        match self {
            DgpSpec::KangSchafer { c, misspecified, flipped } => gen_kang_schafer(&KsConfig {
                n,
                c: *c,
                misspecified: *misspecified,
                flipped: *flipped,
                seed,
            }),
            DgpSpec::HeavyTail { full_overlap } => gen_heavy_tail(&HeavyTailConfig {
                n,
                seed,
                full_overlap: *full_overlap,
            }),
            DgpSpec::Csv { path, truth } => {
                let mut ds = load_csv(path)?;
                ds.truth = *truth;
                Ok(ds)
            }
        }
    }
}

/// Model choices of an experiment apart from truncation and the grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NuisanceOptions {
    pub outcome: OutcomeClass,
    pub propensity: PropensityClass,
    pub intercept: bool,
    pub scaling_alpha: f64,
}

impl Default for NuisanceOptions {
    fn default() -> Self {
        let s = NuisanceSpec::default();
        Self {
            outcome: s.outcome,
            propensity: s.propensity,
            intercept: s.intercept,
            scaling_alpha: s.scaling_alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

/// One Monte-Carlo experiment, readable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dgp: DgpSpec,
    pub n: usize,
    pub replications: usize,
    pub recipes: Vec<Recipe>,
    #[serde(default)]
    pub split: SplitMode,
    #[serde(default)]
    pub estimand: RieszSpec,
    #[serde(default)]
    pub truncation: Option<f64>,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default)]
    pub nuisance: NuisanceOptions,
    #[serde(default)]
    pub gbrt: GbrtGrid,
    #[serde(default)]
    pub mlp: MlpSettings,
    /// Errors larger than this in absolute value are counted as extreme.
    #[serde(default = "default_extreme")]
    pub extreme_threshold: f64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<ReportFormat>,
}

fn default_extreme() -> f64 {
    100.0
}

fn default_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Csv, ReportFormat::Markdown]
}

impl ExperimentConfig {
    /// Defaults for everything but the identifying fields.
    pub fn new(name: &str, dgp: DgpSpec, n: usize, replications: usize, recipes: Vec<Recipe>) -> Self {
        Self {
            name: name.into(),
            dgp,
            n,
            replications,
            recipes,
            split: SplitMode::Single,
            estimand: RieszSpec::MeanMissingOutcome,
            truncation: None,
            seed_base: 0,
            nuisance: NuisanceOptions::default(),
            gbrt: GbrtGrid::default(),
            mlp: MlpSettings::default(),
            extreme_threshold: default_extreme(),
            output_dir: None,
            formats: default_formats(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.recipes.is_empty() {
            return Err(Error::Config("recipes must not be empty".into()));
        }
        if self.n < 2 && !matches!(self.dgp, DgpSpec::Csv { .. }) {
            return Err(Error::Config("n must be at least 2".into()));
        }
        if let SplitMode::CrossFit { k } = self.split {
            if k < 2 {
                return Err(Error::Config("cross-fitting needs k >= 2".into()));
            }
        }
        if self.estimand.is_two_arm() {
            if let Some(r) = self.recipes.iter().find(|r| !r.supports_two_arm()) {
                return Err(Error::Config(format!("recipe `{r}` supports only the mean missing outcome")));
            }
        }
        let uses_gbrt = self.nuisance.outcome == OutcomeClass::Gbrt
            || self.recipes.iter().any(|r| matches!(r, Recipe::ClearnerGbrt | Recipe::LagrangianGbrt));
        if uses_gbrt && self.gbrt.expand().is_empty() {
            return Err(Error::Config("gbrt grid must not be empty".into()));
        }
        if !(self.extreme_threshold > 0.0) {
            return Err(Error::Config("extreme_threshold must be positive".into()));
        }
        self.nuisance_spec().validate()
    }

    pub fn nuisance_spec(&self) -> NuisanceSpec {
        NuisanceSpec {
            outcome: self.nuisance.outcome,
            propensity: self.nuisance.propensity,
            intercept: self.nuisance.intercept,
            truncation: self.truncation,
            scaling_alpha: self.nuisance.scaling_alpha,
            gbrt_grid: self.gbrt.expand(),
            mlp: self.mlp.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KS: &str = r#"
name = "ks_linear"
n = 200
replications = 10
recipes = ["direct", "aipw", "clearner_linear"]
truncation = 0.05

[dgp]
kind = "kang_schafer"
c = 1.0

[split]
mode = "cross_fit"
k = 2
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml_str(KS).unwrap();
        assert_eq!(cfg.recipes, vec![Recipe::Direct, Recipe::Aipw, Recipe::ClearnerLinear]);
        assert_eq!(cfg.split, SplitMode::CrossFit { k: 2 });
        assert_eq!(cfg.nuisance_spec().truncation, Some(0.05));
        assert!(matches!(cfg.dgp, DgpSpec::KangSchafer { misspecified: true, .. }));
        let again = ExperimentConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml_str(&KS.replace("replications = 10", "replications = 0")).is_err());
        assert!(ExperimentConfig::from_toml_str(&KS.replace("\"aipw\", ", "\"xgb\", ")).is_err());
        assert!(ExperimentConfig::from_toml_str(&KS.replace("truncation = 0.05", "truncation = 0.7")).is_err());
        assert!(ExperimentConfig::from_toml_str(&KS.replace("n = 200", "n = 200\nbogus = 1")).is_err());
        let err = ExperimentConfig::from_toml_str(&KS.replace("recipes = [\"direct\", \"aipw\", \"clearner_linear\"]", "recipes = []"))
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
