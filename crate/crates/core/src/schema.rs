//! Variable schemas for panel data.
//!
//! A schema is declared in a plain-text document, one variable per line:
//!
//! ```text
//! # comment lines and blanks are ignored
//! variable id     entity
//! variable year   year
//! variable gender cat levels=M,F
//! variable pay    num missing=NA
//! ```
//!
//! Exactly one `entity` and one `year` variable are required. Categorical
//! variables list their levels in order; the `missing` token (default: the
//! empty string) marks a cell as missing on ingest.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("duplicate variable name `{0}`")]
    DuplicateName(String),
    #[error("schema must declare exactly one entity-id variable, found {0}")]
    EntityCount(usize),
    #[error("schema must declare exactly one year variable, found {0}")]
    YearCount(usize),
    #[error("variable `{0}`: duplicate categorical level `{1}`")]
    DuplicateLevel(String, String),
    #[error("variable `{0}`: {1} variables do not take levels")]
    UnexpectedLevels(String, &'static str),
    #[error("categorical variable `{0}` declares no levels")]
    NoLevels(String),
    #[error("line {0}: cannot parse `{1}`")]
    Parse(usize, String),
    #[error("unknown variable kind `{0}` (expected entity, year, cat, or num)")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    EntityId,
    Year,
    Categorical,
    Numeric,
}

/// Declaration of a single panel variable.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariableSchema {
    pub name: String,
    pub kind: VariableKind,
    /// Ordered category labels; empty unless `kind` is categorical.
    pub levels: Vec<String>,
    /// Cell content treated as missing on ingest.
    pub missing_token: String,
}

impl VariableSchema {
    pub fn numeric(name: &str) -> Self {
        VariableSchema {
            name: name.to_string(),
            kind: VariableKind::Numeric,
            levels: Vec::new(),
            missing_token: String::new(),
        }
    }

    pub fn categorical(name: &str, levels: &[&str]) -> Self {
        VariableSchema {
            name: name.to_string(),
            kind: VariableKind::Categorical,
            levels: levels.iter().map(|s| s.to_string()).collect(),
            missing_token: String::new(),
        }
    }

    pub fn entity(name: &str) -> Self {
        VariableSchema {
            name: name.to_string(),
            kind: VariableKind::EntityId,
            levels: Vec::new(),
            missing_token: String::new(),
        }
    }

    pub fn year(name: &str) -> Self {
        VariableSchema {
            name: name.to_string(),
            kind: VariableKind::Year,
            levels: Vec::new(),
            missing_token: String::new(),
        }
    }

    pub fn level_index(&self, label: &str) -> Option<u32> {
        self.levels
            .iter()
            .position(|l| l == label)
            .map(|i| i as u32)
    }
}

/// Validated list of variable declarations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Schema {
    variables: Vec<VariableSchema>,
    #[serde(skip)]
    by_name: HashMap<String, usize>,
    entity_col: usize,
    year_col: usize,
}

impl Schema {
    pub fn new(variables: Vec<VariableSchema>) -> Result<Self, SchemaError> {
        let mut by_name = HashMap::new();
        for (i, v) in variables.iter().enumerate() {
            if by_name.insert(v.name.clone(), i).is_some() {
                return Err(SchemaError::DuplicateName(v.name.clone()));
            }
            match v.kind {
                VariableKind::Categorical => {
                    if v.levels.is_empty() {
                        return Err(SchemaError::NoLevels(v.name.clone()));
                    }
                    let mut seen = HashMap::new();
                    for l in &v.levels {
                        if seen.insert(l, ()).is_some() {
                            return Err(SchemaError::DuplicateLevel(v.name.clone(), l.clone()));
                        }
                    }
                }
                VariableKind::EntityId | VariableKind::Year | VariableKind::Numeric => {
                    if !v.levels.is_empty() {
                        let what = match v.kind {
                            VariableKind::EntityId => "entity-id",
                            VariableKind::Year => "year",
                            _ => "numeric",
                        };
                        return Err(SchemaError::UnexpectedLevels(v.name.clone(), what));
                    }
                }
            }
        }
        let entities: Vec<usize> = variables
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VariableKind::EntityId)
            .map(|(i, _)| i)
            .collect();
        if entities.len() != 1 {
            return Err(SchemaError::EntityCount(entities.len()));
        }
        let years: Vec<usize> = variables
            .iter()
            .enumerate()
            .filter(|(_, v)| v.kind == VariableKind::Year)
            .map(|(i, _)| i)
            .collect();
        if years.len() != 1 {
            return Err(SchemaError::YearCount(years.len()));
        }
        Ok(Schema {
            by_name,
            entity_col: entities[0],
            year_col: years[0],
            variables,
        })
    }

    /// Parse the plain-text schema document format.
    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        let mut vars = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let keyword = parts.next().unwrap_or("");
            if keyword != "variable" {
                return Err(SchemaError::Parse(lineno + 1, raw.to_string()));
            }
            let name = parts
                .next()
                .ok_or_else(|| SchemaError::Parse(lineno + 1, raw.to_string()))?;
            let kind = match parts.next() {
                Some("entity") => VariableKind::EntityId,
                Some("year") => VariableKind::Year,
                Some("cat") => VariableKind::Categorical,
                Some("num") => VariableKind::Numeric,
                Some(other) => return Err(SchemaError::UnknownKind(other.to_string())),
                None => return Err(SchemaError::Parse(lineno + 1, raw.to_string())),
            };
            let mut levels = Vec::new();
            let mut missing = String::new();
            for opt in parts {
                if let Some(list) = opt.strip_prefix("levels=") {
                    levels = list.split(',').map(|s| s.to_string()).collect();
                } else if let Some(tok) = opt.strip_prefix("missing=") {
                    missing = tok.to_string();
                } else {
                    return Err(SchemaError::Parse(lineno + 1, raw.to_string()));
                }
            }
            vars.push(VariableSchema {
                name: name.to_string(),
                kind,
                levels,
                missing_token: missing,
            });
        }
        Schema::new(vars)
    }

    pub fn variables(&self) -> &[VariableSchema] {
        &self.variables
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        // by_name is skipped by serde; fall back to a scan if deserialized.
        if self.by_name.is_empty() {
            self.variables.iter().position(|v| v.name == name)
        } else {
            self.by_name.get(name).copied()
        }
    }

    pub fn variable(&self, name: &str) -> Option<&VariableSchema> {
        self.index_of(name).map(|i| &self.variables[i])
    }

    pub fn entity_col(&self) -> usize {
        self.entity_col
    }

    pub fn year_col(&self) -> usize {
        self.year_col
    }

    pub fn entity_name(&self) -> &str {
        &self.variables[self.entity_col].name
    }

    pub fn year_name(&self) -> &str {
        &self.variables[self.year_col].name
    }

    /// Render back to the plain-text document format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for v in &self.variables {
            let kind = match v.kind {
                VariableKind::EntityId => "entity",
                VariableKind::Year => "year",
                VariableKind::Categorical => "cat",
                VariableKind::Numeric => "num",
            };
            out.push_str(&format!("variable {} {}", v.name, kind));
            if !v.levels.is_empty() {
                out.push_str(&format!(" levels={}", v.levels.join(",")));
            }
            if !v.missing_token.is_empty() {
                out.push_str(&format!(" missing={}", v.missing_token));
            }
            out.push('\n');
        }
        out
    }
}
