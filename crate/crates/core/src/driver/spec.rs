//! JSON description of a driver.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Delay, Driver, DriverError, Feature, LawConfig, LawReference, PathFunctional, ScalarRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyId {
    Plain,
    Classical,
    H1,
    Path,
    Anticipated,
    Mkv,
    Carre,
}

/// `{"rule": <family id>, <constant>: <value>, ...}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub rule: String,
    #[serde(flatten)]
    pub constants: BTreeMap<String, f64>,
}

impl RuleSpec {
    pub fn build(&self) -> Result<ScalarRule, DriverError> {
        ScalarRule::from_name(&self.rule, &self.constants)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverSpec {
    pub family: FamilyId,
    pub g: RuleSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<PathFunctional>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<Delay>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    /// Replaces the rule's feature coefficient `b`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    /// Declared `(H3)` constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Reads `E(Y_{t+offset} | F_t)` from the previous iterate (full-freeze iteration).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_offset: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<LawReference>,
    #[serde(default)]
    pub per_node: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support_cap: Option<usize>,
}

impl DriverSpec {
    pub fn build(&self, dim: usize) -> Result<Driver, DriverError> {
        let misplaced = |field: &str, family: &str| {
            Err(DriverError::InvalidSpec(format!(
                "`{field}` only applies to the {family} family"
            )))
        };
        if self.phi.is_some() && self.family != FamilyId::Path {
            return misplaced("phi", "path");
        }
        if (self.zeta.is_some() || self.eta.is_some()) && self.family != FamilyId::Anticipated {
            return misplaced("zeta/eta", "anticipated");
        }
        if (self.reference.is_some() || self.per_node || self.support_cap.is_some()) && self.family != FamilyId::Mkv {
            return misplaced("reference/per_node/support_cap", "mkv");
        }
        let mut rule = self.g.build()?;
        if let Some(kappa) = self.kappa {
            if !kappa.is_finite() {
                return Err(DriverError::InvalidSpec("kappa must be finite".into()));
            }
            rule = rule.with_feature_coefficient(kappa);
        }
        let feature = match self.family {
            FamilyId::Plain => Feature::None,
            FamilyId::Classical => Feature::Classical,
            FamilyId::H1 => Feature::H1,
            FamilyId::Path => Feature::Path(
                self.phi
                    .ok_or_else(|| DriverError::InvalidSpec("path family needs `phi`".into()))?,
            ),
            FamilyId::Anticipated => Feature::Anticipated {
                delay: self
                    .zeta
                    .clone()
                    .ok_or_else(|| DriverError::InvalidSpec("anticipated family needs `zeta`".into()))?,
                tail: self.eta,
            },
            FamilyId::Mkv => {
                let default = LawConfig::default();
                Feature::Law(LawConfig {
                    reference: self.reference.unwrap_or(default.reference),
                    per_node: self.per_node,
                    cap: self.support_cap.unwrap_or(default.cap),
                })
            }
            FamilyId::Carre => Feature::Carre,
        };
        let mut driver = Driver::new(dim, rule, feature);
        if let Some(offset) = self.y_offset {
            driver = driver.with_frozen_y(offset);
        }
        if let Some(lambda) = self.lambda {
            if !(lambda.is_finite() && lambda >= 0.0) {
                return Err(DriverError::InvalidSpec(format!(
                    "declared lambda must be finite and nonnegative, got {lambda}"
                )));
            }
            driver = driver.with_declared_lambda(lambda);
        }
        Ok(driver)
    }
}
