use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::gbrt::BoostParams;
use crate::mlp::{MlpSelector, TrainConfig, DEFAULT_HIDDEN};
use crate::{Error, Result};

/// Estimator recipes by stable string id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Recipe {
    Direct,
    Ipw,
    IpwSn,
    Aipw,
    AipwSn,
    Tmle,
    TmleL,
    ClearnerLinear,
    ClearnerL,
    ClearnerGbrt,
    ClearnerMlp,
    LagrangianGbrt,
    DualClearner,
    DualClearnerSn,
    ParamFluc,
    ParamFlucSn,
}

impl Recipe {
    pub const ALL: [Recipe; 16] = [
        Recipe::Direct,
        Recipe::Ipw,
        Recipe::IpwSn,
        Recipe::Aipw,
        Recipe::AipwSn,
        Recipe::Tmle,
        Recipe::TmleL,
        Recipe::ClearnerLinear,
        Recipe::ClearnerL,
        Recipe::ClearnerGbrt,
        Recipe::ClearnerMlp,
        Recipe::LagrangianGbrt,
        Recipe::DualClearner,
        Recipe::DualClearnerSn,
        Recipe::ParamFluc,
        Recipe::ParamFlucSn,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Recipe::Direct => "direct",
            Recipe::Ipw => "ipw",
            Recipe::IpwSn => "ipw_sn",
            Recipe::Aipw => "aipw",
            Recipe::AipwSn => "aipw_sn",
            Recipe::Tmle => "tmle",
            Recipe::TmleL => "tmle_l",
            Recipe::ClearnerLinear => "clearner_linear",
            Recipe::ClearnerL => "clearner_l",
            Recipe::ClearnerGbrt => "clearner_gbrt",
            Recipe::ClearnerMlp => "clearner_mlp",
            Recipe::LagrangianGbrt => "lagrangian_gbrt",
            Recipe::DualClearner => "dual_clearner",
            Recipe::DualClearnerSn => "dual_clearner_sn",
            Recipe::ParamFluc => "param_fluc",
            Recipe::ParamFlucSn => "param_fluc_sn",
        }
    }

    /// Recipes whose outcome model is fitted under the first-order constraint.
    pub fn is_clearner(&self) -> bool {
        matches!(
            self,
            Recipe::ClearnerLinear | Recipe::ClearnerL | Recipe::ClearnerGbrt | Recipe::ClearnerMlp | Recipe::LagrangianGbrt
        )
    }

    /// Recipes that also accept the ATE and policy-value functionals.
    pub fn supports_two_arm(&self) -> bool {
        matches!(
            self,
            Recipe::Direct
                | Recipe::Ipw
                | Recipe::IpwSn
                | Recipe::Aipw
                | Recipe::AipwSn
                | Recipe::Tmle
                | Recipe::ClearnerLinear
        )
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Recipe::ALL
            .iter()
            .copied()
            .find(|r| r.id() == s)
            .ok_or_else(|| Error::Config(format!("unknown recipe `{s}`")))
    }
}

impl TryFrom<String> for Recipe {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Recipe> for String {
    fn from(r: Recipe) -> String {
        r.id().to_string()
    }
}

/// Outcome regression used by the plain (non-constrained) recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeClass {
    #[default]
    Linear,
    Gbrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum PropensityClass {
    /// Logistic regression with an optional L1 penalty (0 for maximum likelihood).
    #[default]
    Logistic,
    LogisticL1 {
        l1: f64,
    },
    /// The dataset's true propensities.
    Known,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpSettings {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    /// Penalty weights; defaults to `{0, 1, 4, 16, 64} / P_eval[A/pi]^2`.
    pub lambdas: Option<Vec<f64>>,
    pub selector: MlpSelector,
}

impl Default for MlpSettings {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN.to_vec(),
            train: TrainConfig::default(),
            lambdas: None,
            selector: MlpSelector::SmallestShift { slack: 0.1 },
        }
    }
}

/// Model-class choices shared by every recipe of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuisanceSpec {
    pub outcome: OutcomeClass,
    pub propensity: PropensityClass,
    /// Fit intercepts in the outcome and propensity regressions.
    pub intercept: bool,
    /// Lower bound applied to estimated propensities.
    pub truncation: Option<f64>,
    /// Margin of the outcome scaling used by the logit-link recipes.
    pub scaling_alpha: f64,
    /// Candidate boosting settings, searched on validation MSE.
    pub gbrt_grid: Vec<BoostParams>,
    pub mlp: MlpSettings,
}

impl Default for NuisanceSpec {
    fn default() -> Self {
        Self {
            outcome: OutcomeClass::Linear,
            propensity: PropensityClass::Logistic,
            intercept: false,
            truncation: None,
            scaling_alpha: 0.1,
            gbrt_grid: vec![BoostParams::default()],
            mlp: MlpSettings::default(),
        }
    }
}

impl NuisanceSpec {
    pub fn validate(&self) -> Result<()> {
        if let Some(eta) = self.truncation {
            if !(eta > 0.0 && eta < 0.5) {
                return Err(Error::Config(format!("truncation must lie in (0, 0.5), got {eta}")));
            }
        }
        if !(self.scaling_alpha >= 0.0) {
            return Err(Error::Config("scaling_alpha must be >= 0".into()));
        }
        if let PropensityClass::LogisticL1 { l1 } = self.propensity {
            if !(l1 >= 0.0) {
                return Err(Error::Config("l1 must be >= 0".into()));
            }
        }
        if self.gbrt_grid.is_empty() {
            return Err(Error::Config("gbrt_grid must not be empty".into()));
        }
        for p in &self.gbrt_grid {
            p.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.mlp.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.mlp.lambdas.as_ref().is_some_and(|l| l.is_empty() || l.iter().any(|v| !(*v >= 0.0))) {
            return Err(Error::Config("mlp lambdas must be nonempty and >= 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for r in Recipe::ALL {
            assert_eq!(r.id().parse::<Recipe>().unwrap(), r);
            let json = serde_json::to_string(&r).unwrap();
            assert_eq!(json, format!("\"{}\"", r.id()));
            assert_eq!(serde_json::from_str::<Recipe>(&json).unwrap(), r);
        }
        assert!("xgboost".parse::<Recipe>().is_err());
    }
}
