//! Model formula documents.
//!
//! A formula is a small plain-text document shared verbatim between client and
//! server; it names the response, its transform chain, the predictor terms,
//! and the row filters. Example:
//!
//! ```text
//! response pay
//! transform inflation_adjust
//! transform log
//! index 1988 0.82
//! index 1989 0.86
//! predictor age
//! predictor age square
//! dummy race ref=white
//! dummy year ref=1988
//! filter pay > 0
//! filter gender == M
//! drop_invalid on
//! ```
//!
//! `transform` lines apply to the response in order. `predictor` declares a
//! numeric term, optionally transformed (`log` or `square`). `dummy` expands a
//! categorical (or the year variable) into 0/1 indicators named `var=level`,
//! omitting the reference level. `filter` keeps rows satisfying the
//! comparison; `drop_invalid on` silently drops rows whose response transform
//! is undefined (log of a non-positive value, missing inflation index) instead
//! of failing. `index` rows supply the year→index table used by
//! `inflation_adjust` (the value divides the response for that year).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::PanelDataset;
use crate::schema::{Schema, VariableKind};

#[derive(Debug, Error)]
pub enum FormulaError {
    #[error("line {0}: cannot parse `{1}`")]
    Parse(usize, String),
    #[error("no response declared")]
    NoResponse,
    #[error("unknown transform `{0}`")]
    UnknownTransform(String),
    #[error("unknown filter operator `{0}`")]
    UnknownOp(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("variable `{0}` is not usable as {1}")]
    KindMismatch(String, &'static str),
    #[error("dummy term for `{var}`: reference level `{reference}` not found")]
    ReferenceLevel { var: String, reference: String },
    #[error("`{0}` declared more than once")]
    Duplicate(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Log,
    Square,
    InflationAdjust,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    /// Numeric predictor, optionally transformed.
    Numeric {
        var: String,
        transform: Option<Transform>,
    },
    /// Dummy encoding of a categorical (or year) variable, omitting `reference`.
    Dummy { var: String, reference: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Filter {
    pub var: String,
    pub op: FilterOp,
    /// Raw comparison value; parsed per the variable's kind at frame build.
    pub value: String,
}

/// Parsed model formula.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub response: String,
    pub response_transforms: Vec<Transform>,
    pub terms: Vec<Term>,
    pub filters: Vec<Filter>,
    pub index_table: BTreeMap<i32, f64>,
    pub drop_invalid: bool,
}

impl ModelSpec {
    pub fn parse(text: &str) -> Result<ModelSpec, FormulaError> {
        let mut response: Option<String> = None;
        let mut response_transforms = Vec::new();
        let mut terms = Vec::new();
        let mut filters = Vec::new();
        let mut index_table = BTreeMap::new();
        let mut drop_invalid = false;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = || FormulaError::Parse(lineno + 1, raw.trim().to_string());
            let mut parts = line.split_whitespace();
            match parts.next().unwrap_or("") {
                "response" => {
                    if response.is_some() {
                        return Err(FormulaError::Duplicate("response"));
                    }
                    response = Some(parts.next().ok_or_else(parse_err)?.to_string());
                }
                "transform" => {
                    let name = parts.next().ok_or_else(parse_err)?;
                    response_transforms.push(parse_transform(name)?);
                }
                "index" => {
                    let year: i32 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(parse_err)?;
                    let value: f64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(parse_err)?;
                    index_table.insert(year, value);
                }
                "predictor" => {
                    let var = parts.next().ok_or_else(parse_err)?.to_string();
                    let transform = match parts.next() {
                        None => None,
                        Some(name) => Some(parse_transform(name)?),
                    };
                    if transform == Some(Transform::InflationAdjust) {
                        return Err(FormulaError::UnknownTransform(
                            "inflation_adjust (response only)".into(),
                        ));
                    }
                    terms.push(Term::Numeric { var, transform });
                }
                "dummy" => {
                    let var = parts.next().ok_or_else(parse_err)?.to_string();
                    let refspec = parts.next().ok_or_else(parse_err)?;
                    let reference = refspec
                        .strip_prefix("ref=")
                        .ok_or_else(parse_err)?
                        .to_string();
                    terms.push(Term::Dummy { var, reference });
                }
                "filter" => {
                    let var = parts.next().ok_or_else(parse_err)?.to_string();
                    let op = match parts.next().ok_or_else(parse_err)? {
                        "==" => FilterOp::Eq,
                        "!=" => FilterOp::Ne,
                        "<" => FilterOp::Lt,
                        "<=" => FilterOp::Le,
                        ">" => FilterOp::Gt,
                        ">=" => FilterOp::Ge,
                        other => return Err(FormulaError::UnknownOp(other.to_string())),
                    };
                    let value = parts.next().ok_or_else(parse_err)?.to_string();
                    filters.push(Filter { var, op, value });
                }
                "drop_invalid" => {
                    drop_invalid = matches!(parts.next(), Some("on") | Some("true") | None);
                }
                _ => return Err(parse_err()),
            }
        }
        Ok(ModelSpec {
            response: response.ok_or(FormulaError::NoResponse)?,
            response_transforms,
            terms,
            filters,
            index_table,
            drop_invalid,
        })
    }

    /// Check variable references and kinds against a schema.
    pub fn validate(&self, schema: &Schema) -> Result<(), FormulaError> {
        let resolve = |name: &str| {
            schema
                .variable(name)
                .ok_or_else(|| FormulaError::UnknownVariable(name.to_string()))
        };
        let resp = resolve(&self.response)?;
        if resp.kind != VariableKind::Numeric {
            return Err(FormulaError::KindMismatch(
                self.response.clone(),
                "a numeric response",
            ));
        }
        for term in &self.terms {
            match term {
                Term::Numeric { var, .. } => {
                    let v = resolve(var)?;
                    if !matches!(v.kind, VariableKind::Numeric | VariableKind::Year) {
                        return Err(FormulaError::KindMismatch(var.clone(), "a numeric term"));
                    }
                }
                Term::Dummy { var, reference } => {
                    let v = resolve(var)?;
                    match v.kind {
                        VariableKind::Categorical => {
                            if v.level_index(reference).is_none() {
                                return Err(FormulaError::ReferenceLevel {
                                    var: var.clone(),
                                    reference: reference.clone(),
                                });
                            }
                        }
                        VariableKind::Year => {
                            if reference.parse::<i32>().is_err() {
                                return Err(FormulaError::ReferenceLevel {
                                    var: var.clone(),
                                    reference: reference.clone(),
                                });
                            }
                        }
                        _ => return Err(FormulaError::KindMismatch(var.clone(), "a dummy term")),
                    }
                }
            }
        }
        for f in &self.filters {
            let v = resolve(&f.var)?;
            match v.kind {
                VariableKind::Categorical | VariableKind::EntityId => {
                    if !matches!(f.op, FilterOp::Eq | FilterOp::Ne) {
                        return Err(FormulaError::KindMismatch(
                            f.var.clone(),
                            "an ordered filter",
                        ));
                    }
                }
                VariableKind::Numeric | VariableKind::Year => {
                    if f.value.parse::<f64>().is_err() {
                        return Err(FormulaError::KindMismatch(
                            f.var.clone(),
                            "a numeric comparison",
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Every variable a frame build reads: response, term, and filter variables.
    pub fn used_variables(&self) -> Vec<&str> {
        let mut used = vec![self.response.as_str()];
        for t in &self.terms {
            match t {
                Term::Numeric { var, .. } | Term::Dummy { var, .. } => used.push(var),
            }
        }
        for f in &self.filters {
            used.push(&f.var);
        }
        used.sort_unstable();
        used.dedup();
        used
    }

    /// Names of the design columns this formula produces on `data`,
    /// intercept first. Dummy terms expand to `var=level`.
    pub fn design_names(&self, data: &PanelDataset) -> Result<Vec<String>, FormulaError> {
        self.validate(data.schema())?;
        let mut names = vec!["(Intercept)".to_string()];
        for term in &self.terms {
            match term {
                Term::Numeric { var, transform } => names.push(numeric_term_name(var, *transform)),
                Term::Dummy { var, reference } => {
                    let v = data.schema().variable(var).unwrap();
                    match v.kind {
                        VariableKind::Categorical => {
                            for level in &v.levels {
                                if level != reference {
                                    names.push(format!("{var}={level}"));
                                }
                            }
                        }
                        VariableKind::Year => {
                            for y in data.observed_years() {
                                if y.to_string() != *reference {
                                    names.push(format!("{var}={y}"));
                                }
                            }
                        }
                        _ => unreachable!(),
                    }
                }
            }
        }
        Ok(names)
    }
}

pub(crate) fn numeric_term_name(var: &str, transform: Option<Transform>) -> String {
    match transform {
        None => var.to_string(),
        Some(Transform::Log) => format!("log({var})"),
        Some(Transform::Square) => format!("{var}^2"),
        Some(Transform::InflationAdjust) => format!("real({var})"),
    }
}

fn parse_transform(name: &str) -> Result<Transform, FormulaError> {
    match name {
        "log" => Ok(Transform::Log),
        "square" => Ok(Transform::Square),
        "inflation_adjust" => Ok(Transform::InflationAdjust),
        other => Err(FormulaError::UnknownTransform(other.to_string())),
    }
}
