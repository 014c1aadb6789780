//! Attribute-disclosure risk assessment for synthetic panels.
//!
//! For each combination of key-variable values (the fields an intruder could
//! know from public products), compute how often each sensitive category
//! appears among synthetic entities with that combination. An entity in the
//! confidential data counts as at risk when the synthetic frequency of its
//! true category reaches the steward's threshold. Entities whose key
//! combination never occurs in the synthetic data land in a no-match bucket.
//! Both sides are evaluated on each entity's most recent record.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::panel::PanelDataset;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RiskReport {
    pub threshold: f64,
    /// Confidential entities with an observable sensitive value.
    pub total_entities: usize,
    pub at_risk: usize,
    pub at_risk_fraction: f64,
    /// Entities whose key combination is absent from the synthetic data.
    pub no_match: usize,
}

fn latest_row(data: &PanelDataset, entity: u32) -> u32 {
    *data
        .rows_of_entity(entity)
        .iter()
        .max_by_key(|&&r| data.year_of_row(r))
        .expect("entities have at least one row")
}

/// Key = rendered values of `key_vars` at the entity's most recent row;
/// missing values render as the empty token and form their own bucket.
fn key_of(data: &PanelDataset, row: u32, key_cols: &[usize]) -> String {
    let mut parts = Vec::with_capacity(key_cols.len());
    for &c in key_cols {
        let var = &data.schema().variables()[c];
        let text = match data.level_at(c, row) {
            Some(level) => var.levels[level as usize].clone(),
            None => match data.numeric_at(c, row) {
                Some(x) => format!("{x}"),
                None => String::new(),
            },
        };
        parts.push(text);
    }
    parts.join("\u{1f}")
}

pub fn assess_attribute_risk(
    confidential: &PanelDataset,
    synthetic: &PanelDataset,
    key_vars: &[String],
    sensitive_var: &str,
    threshold: f64,
) -> Result<RiskReport, SynthError> {
    let conf_keys: Vec<usize> = key_vars
        .iter()
        .map(|v| {
            confidential
                .schema()
                .index_of(v)
                .ok_or_else(|| SynthError::UnknownVariable(v.clone()))
        })
        .collect::<Result<_, _>>()?;
    let syn_keys: Vec<usize> = key_vars
        .iter()
        .map(|v| {
            synthetic
                .schema()
                .index_of(v)
                .ok_or_else(|| SynthError::UnknownVariable(v.clone()))
        })
        .collect::<Result<_, _>>()?;
    let conf_sens = confidential
        .schema()
        .index_of(sensitive_var)
        .ok_or_else(|| SynthError::UnknownVariable(sensitive_var.to_string()))?;
    let syn_sens = synthetic
        .schema()
        .index_of(sensitive_var)
        .ok_or_else(|| SynthError::UnknownVariable(sensitive_var.to_string()))?;
    let sens_schema = &confidential.schema().variables()[conf_sens];
    if sens_schema.levels.is_empty() {
        return Err(SynthError::KindMismatch(sensitive_var.to_string()));
    }

    // Synthetic frequency table: key -> counts per sensitive level label.
    let mut table: HashMap<String, (HashMap<String, usize>, usize)> = HashMap::new();
    for e in 0..synthetic.n_entities() as u32 {
        let row = latest_row(synthetic, e);
        let Some(level) = synthetic.level_at(syn_sens, row) else {
            continue;
        };
        let label = synthetic.schema().variables()[syn_sens].levels[level as usize].clone();
        let key = key_of(synthetic, row, &syn_keys);
        let entry = table.entry(key).or_default();
        *entry.0.entry(label).or_insert(0) += 1;
        entry.1 += 1;
    }

    let mut total = 0usize;
    let mut at_risk = 0usize;
    let mut no_match = 0usize;
    for e in 0..confidential.n_entities() as u32 {
        let row = latest_row(confidential, e);
        let Some(level) = confidential.level_at(conf_sens, row) else {
            continue;
        };
        total += 1;
        let true_label = &sens_schema.levels[level as usize];
        let key = key_of(confidential, row, &conf_keys);
        match table.get(&key) {
            None => no_match += 1,
            Some((counts, denom)) => {
                let freq = counts.get(true_label).copied().unwrap_or(0) as f64 / *denom as f64;
                if freq >= threshold {
                    at_risk += 1;
                }
            }
        }
    }
    Ok(RiskReport {
        threshold,
        total_entities: total,
        at_risk,
        at_risk_fraction: if total > 0 {
            at_risk as f64 / total as f64
        } else {
            0.0
        },
        no_match,
    })
}
