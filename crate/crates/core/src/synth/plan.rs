//! Synthesis plan documents.
//!
//! A plan lists the variables to synthesize, in order, with a strategy and a
//! conditioning set drawn from earlier variables:
//!
//! ```text
//! career agency
//! constant gender cond=agency
//! change-indicator race cond=agency,gender
//! lag-one pay cond=agency,gender,race
//! cross-sectional occupation cond=agency,gender
//! min_leaf 30
//! alpha 0.05
//! ```
//!
//! The career variable comes first and carries no conditioning. `constant`
//! draws one value per entity; `cross-sectional` draws each year
//! independently given current values of earlier variables; `lag-one` also
//! conditions on the previous year's own value; `change-indicator` is the
//! strategy for attributes that rarely change: a binary change flag decides
//! between a constant draw and a year-by-year lag-one path.

use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::schema::{Schema, VariableKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Career,
    ConstantDemographic,
    CartCrossSectional,
    CartLagOne,
    ChangeIndicator,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanVariable {
    pub var: String,
    pub strategy: Strategy,
    pub conditioning: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisPlan {
    pub variables: Vec<PlanVariable>,
    pub min_leaf: usize,
    pub alpha: f64,
}

impl SynthesisPlan {
    pub fn parse(text: &str) -> Result<SynthesisPlan, SynthError> {
        let mut variables = Vec::new();
        let mut min_leaf = 30usize;
        let mut alpha = 0.05f64;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = || SynthError::PlanParse(lineno + 1, raw.trim().to_string());
            let mut parts = line.split_whitespace();
            let keyword = parts.next().unwrap_or("");
            match keyword {
                "min_leaf" => {
                    min_leaf = parts.next().and_then(|s| s.parse().ok()).ok_or_else(err)?;
                }
                "alpha" => {
                    alpha = parts.next().and_then(|s| s.parse().ok()).ok_or_else(err)?;
                }
                "career" | "constant" | "cross-sectional" | "lag-one" | "change-indicator" => {
                    let strategy = match keyword {
                        "career" => Strategy::Career,
                        "constant" => Strategy::ConstantDemographic,
                        "cross-sectional" => Strategy::CartCrossSectional,
                        "lag-one" => Strategy::CartLagOne,
                        "change-indicator" => Strategy::ChangeIndicator,
                        _ => unreachable!(),
                    };
                    let var = parts.next().ok_or_else(err)?.to_string();
                    let mut conditioning = Vec::new();
                    for opt in parts {
                        let list = opt.strip_prefix("cond=").ok_or_else(err)?;
                        conditioning = list.split(',').map(|s| s.to_string()).collect();
                    }
                    variables.push(PlanVariable {
                        var,
                        strategy,
                        conditioning,
                    });
                }
                _ => return Err(err()),
            }
        }
        let plan = SynthesisPlan {
            variables,
            min_leaf,
            alpha,
        };
        plan.check_order()?;
        Ok(plan)
    }

    /// Career first; every conditioning set references only earlier variables.
    pub fn check_order(&self) -> Result<(), SynthError> {
        if self.variables.is_empty() {
            return Err(SynthError::PlanOrder("plan declares no variables".into()));
        }
        if self.variables[0].strategy != Strategy::Career {
            return Err(SynthError::PlanOrder(
                "the first plan variable must use the career strategy".into(),
            ));
        }
        for (i, v) in self.variables.iter().enumerate() {
            if i > 0 && v.strategy == Strategy::Career {
                return Err(SynthError::PlanOrder(
                    "only the first variable may use the career strategy".into(),
                ));
            }
            for c in &v.conditioning {
                let earlier = self.variables[..i].iter().any(|p| &p.var == c);
                if !earlier {
                    return Err(SynthError::PlanOrder(format!(
                        "`{}` conditions on `{}`, which is not synthesized earlier",
                        v.var, c
                    )));
                }
            }
        }
        Ok(())
    }

    /// Check variable names and kinds against a schema.
    pub fn validate(&self, schema: &Schema) -> Result<(), SynthError> {
        self.check_order()?;
        for v in &self.variables {
            let var = schema
                .variable(&v.var)
                .ok_or_else(|| SynthError::UnknownVariable(v.var.clone()))?;
            match v.strategy {
                Strategy::Career | Strategy::ChangeIndicator => {
                    if var.kind != VariableKind::Categorical {
                        return Err(SynthError::KindMismatch(v.var.clone()));
                    }
                }
                _ => {
                    if !matches!(var.kind, VariableKind::Categorical | VariableKind::Numeric) {
                        return Err(SynthError::KindMismatch(v.var.clone()));
                    }
                }
            }
        }
        Ok(())
    }
}
