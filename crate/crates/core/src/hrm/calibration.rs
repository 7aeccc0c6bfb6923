//! Shipped calibration data, compiled in from the repository's
//! `calibration/` directory.

use serde::Deserialize;

use super::{CostModel, DesignPoint, DesignSpec, ErrorModel, HrmError, HrmProfile};

pub const ERROR_MODEL_TOML: &str = include_str!("../../../../calibration/error-model.toml");
pub const COST_MODEL_TOML: &str = include_str!("../../../../calibration/cost-model.toml");
pub const PROFILE_TOML: &str = include_str!("../../../../calibration/profile.toml");
pub const DESIGNS_TOML: &str = include_str!("../../../../calibration/designs.toml");
pub const DESIGN_SPACE_TOML: &str = include_str!("../../../../calibration/design-space.toml");

pub fn parse_error_model(text: &str) -> Result<ErrorModel, HrmError> {
    let em: ErrorModel = toml::from_str(text).map_err(|e| HrmError::Config(format!("error model: {e}")))?;
    em.validate()?;
    Ok(em)
}

pub fn parse_cost_model(text: &str) -> Result<CostModel, HrmError> {
    let cm: CostModel = toml::from_str(text).map_err(|e| HrmError::Config(format!("cost model: {e}")))?;
    cm.validate()?;
    Ok(cm)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignsFile {
    design: Vec<DesignSpec>,
}

pub fn parse_designs(text: &str) -> Result<Vec<DesignSpec>, HrmError> {
    let f: DesignsFile = toml::from_str(text).map_err(|e| HrmError::Config(format!("designs: {e}")))?;
    let mut names = std::collections::BTreeSet::new();
    for d in &f.design {
        if !names.insert(d.name.as_str()) {
            return Err(HrmError::Config(format!("design `{}` defined twice", d.name)));
        }
    }
    Ok(f.design)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub error_model: ErrorModel,
    pub cost_model: CostModel,
    pub profile: HrmProfile,
    pub designs: Vec<DesignSpec>,
}

impl Calibration {
    pub fn shipped() -> Result<Calibration, HrmError> {
        Ok(Calibration {
            error_model: parse_error_model(ERROR_MODEL_TOML)?,
            cost_model: parse_cost_model(COST_MODEL_TOML)?,
            profile: HrmProfile::from_toml(PROFILE_TOML)?,
            designs: parse_designs(DESIGNS_TOML)?,
        })
    }

    pub fn design(&self, name: &str) -> Result<DesignPoint, HrmError> {
        self.designs
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| HrmError::Config(format!("unknown design `{name}`")))?
            .bind(&self.cost_model)
    }

    pub fn design_names(&self) -> Vec<&str> {
        self.designs.iter().map(|d| d.name.as_str()).collect()
    }
}
