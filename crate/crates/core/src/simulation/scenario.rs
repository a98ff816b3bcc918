use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::dgm::{DgmParams, LogitCoefs};
use crate::development::HazardFamily;
use crate::glm::Link;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    #[serde(rename = "1")]
    S1,
    #[serde(rename = "2")]
    S2,
    #[serde(rename = "3")]
    S3,
    #[serde(rename = "4a")]
    S4a,
    #[serde(rename = "4b")]
    S4b,
    #[serde(rename = "5a")]
    S5a,
    #[serde(rename = "5b")]
    S5b,
    #[serde(rename = "6a")]
    S6a,
    #[serde(rename = "6b")]
    S6b,
    #[serde(rename = "6c")]
    S6c,
    #[serde(rename = "6d")]
    S6d,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 11] = [
        Self::S1,
        Self::S2,
        Self::S3,
        Self::S4a,
        Self::S4b,
        Self::S5a,
        Self::S5b,
        Self::S6a,
        Self::S6b,
        Self::S6c,
        Self::S6d,
    ];

    /// Scenarios in which one of the identifying assumptions is violated.
    pub const VIOLATIONS: [ScenarioId; 8] = [
        Self::S4a,
        Self::S4b,
        Self::S5a,
        Self::S5b,
        Self::S6a,
        Self::S6b,
        Self::S6c,
        Self::S6d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::S1 => "1",
            Self::S2 => "2",
            Self::S3 => "3",
            Self::S4a => "4a",
            Self::S4b => "4b",
            Self::S5a => "5a",
            Self::S5b => "5b",
            Self::S6a => "6a",
            Self::S6b => "6b",
            Self::S6c => "6c",
            Self::S6d => "6d",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown scenario `{s}` (expected one of 1, 2, 3, 4a, 4b, 5a, 5b, 6a, 6b, 6c, 6d)"))
    }
}

/// The data-generating mechanisms and validation weight model of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: ScenarioId,
    pub family: HazardFamily,
    pub development: DgmParams,
    pub validation: DgmParams,
    /// Formula of the treatment model behind the artificial-censoring weights.
    pub weight_formula: String,
    pub weight_link: Link,
    /// Link of a separately fitted visit-0 weight model, when it differs.
    #[serde(default)]
    pub baseline_weight_link: Option<Link>,
    /// Predict from `L_0` measured with error instead of `L_0`.
    pub measurement_error: bool,
}

impl Scenario {
    pub fn new(id: ScenarioId, family: HazardFamily) -> Self {
        let base = DgmParams::for_family(family);
        let mut development = base;
        let mut validation = base;
        let additive = family == HazardFamily::Additive;

        match id {
            ScenarioId::S2 => development.hazard.alpha0 = if additive { 0.3 } else { -1.0 },
            ScenarioId::S4a | ScenarioId::S4b => {
                let gamma0 = match (id, additive) {
                    (ScenarioId::S4a, true) => -0.25,
                    (ScenarioId::S4a, false) => 0.5,
                    (_, true) => -0.75,
                    (_, false) => 0.0,
                };
                validation.later_treatment.intercept = gamma0;
                // The additive visit-0 model has fixed coefficients; the Cox
                // one shares the intercept with later visits.
                if !additive {
                    validation.initial_treatment.intercept = gamma0;
                }
            }
            ScenarioId::S6c => {
                let quadratic = if additive {
                    LogitCoefs {
                        intercept: -1.0,
                        linear: 0.01,
                        quadratic: 0.01,
                    }
                } else {
                    LogitCoefs {
                        intercept: -1.0,
                        linear: 0.5,
                        quadratic: 0.25,
                    }
                };
                validation.initial_treatment = quadratic;
                validation.later_treatment = quadratic;
            }
            _ => {}
        }

        let weight_formula = match id {
            ScenarioId::S5a => "1",
            ScenarioId::S5b => "1 + first(L)",
            ScenarioId::S6a => "1 + log(L+20)",
            ScenarioId::S6b => "1 + L^2",
            _ => "1 + L",
        }
        .to_string();

        Self {
            id,
            family,
            development,
            validation,
            weight_formula,
            weight_link: if id == ScenarioId::S6d { Link::Cauchit } else { Link::Logit },
            // The misspecified link concerns the later decisions; initiation at
            // visit 0 keeps the logit model.
            baseline_weight_link: (id == ScenarioId::S6d).then_some(Link::Logit),
            measurement_error: id == ScenarioId::S3,
        }
    }
}
