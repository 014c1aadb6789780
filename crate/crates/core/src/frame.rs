//! Analysis frames: numeric design matrices built from a panel and a formula.
//!
//! Frame construction applies filters, drops rows with missing values in any
//! used variable (available-case deletion), applies the response transform
//! chain, and dummy-encodes categorical terms against their reference level.

use std::path::Path;

use thiserror::Error;

use crate::formula::{
    numeric_term_name, Filter, FilterOp, FormulaError, ModelSpec, Term, Transform,
};
use crate::panel::PanelDataset;
use crate::schema::VariableKind;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error("row {row}: {transform:?} undefined for value {value} in `{column}`")]
    TransformDomain {
        row: u32,
        column: String,
        value: f64,
        transform: Transform,
    },
    #[error("no inflation index for year {0}")]
    MissingIndex(i32),
    #[error("dummy reference level `{reference}` for `{var}` absent from data")]
    ReferenceAbsent { var: String, reference: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone)]
pub struct FrameColumn {
    pub name: String,
    pub values: Vec<f64>,
}

/// Fully numeric, missing-free view ready for regression.
#[derive(Debug, Clone)]
pub struct AnalysisFrame {
    pub response_name: String,
    pub response: Vec<f64>,
    /// Design columns, `(Intercept)` first.
    pub columns: Vec<FrameColumn>,
    /// Entity id per row (cluster label).
    pub cluster: Vec<u32>,
    /// Calendar year per row.
    pub years: Vec<i32>,
    /// Human-readable transform log.
    pub provenance: Vec<String>,
}

impl AnalysisFrame {
    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn column(&self, name: &str) -> Option<&FrameColumn> {
        self.columns.iter().find(|c| c.name == name)
    }

    /// New frame restricted to `rows` (indices into this frame).
    pub fn select_rows(&self, rows: &[usize]) -> AnalysisFrame {
        AnalysisFrame {
            response_name: self.response_name.clone(),
            response: rows.iter().map(|&r| self.response[r]).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| FrameColumn {
                    name: c.name.clone(),
                    values: rows.iter().map(|&r| c.values[r]).collect(),
                })
                .collect(),
            cluster: rows.iter().map(|&r| self.cluster[r]).collect(),
            years: rows.iter().map(|&r| self.years[r]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Debug export: response, design columns, cluster, year.
    pub fn export_csv(&self, path: &Path) -> Result<(), FrameError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![self.response_name.clone()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        header.push("__cluster".into());
        header.push("__year".into());
        w.write_record(&header)?;
        for i in 0..self.n_rows() {
            let mut rec = vec![format!("{}", self.response[i])];
            rec.extend(self.columns.iter().map(|c| format!("{}", c.values[i])));
            rec.push(self.cluster[i].to_string());
            rec.push(self.years[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Build a frame over all rows of `data`.
pub fn build_frame(data: &PanelDataset, spec: &ModelSpec) -> Result<AnalysisFrame, FrameError> {
    let all: Vec<u32> = (0..data.n_rows() as u32).collect();
    build_frame_subset(data, spec, &all)
}

/// Build a frame over a subset of row indices (used for per-partition fits).
pub fn build_frame_subset(
    data: &PanelDataset,
    spec: &ModelSpec,
    rows: &[u32],
) -> Result<AnalysisFrame, FrameError> {
    spec.validate(data.schema())?;
    let schema = data.schema();

    let col_of = |name: &str| schema.index_of(name).expect("validated variable");
    let resp_col = col_of(&spec.response);

    // Resolve term layout up front: (start offset, width) per term.
    let mut columns: Vec<FrameColumn> = vec![FrameColumn {
        name: "(Intercept)".into(),
        values: Vec::new(),
    }];
    struct DummyLayout {
        col: usize,
        // (design column index, level index or year)
        slots: Vec<(usize, DummyLevel)>,
    }
    enum DummyLevel {
        Cat(u32),
        Year(i32),
    }
    enum TermPlan {
        Numeric {
            col: usize,
            transform: Option<Transform>,
            design_ix: usize,
        },
        Dummy(DummyLayout),
    }
    let mut plans = Vec::new();
    for term in &spec.terms {
        match term {
            Term::Numeric { var, transform } => {
                let design_ix = columns.len();
                columns.push(FrameColumn {
                    name: numeric_term_name(var, *transform),
                    values: Vec::new(),
                });
                plans.push(TermPlan::Numeric {
                    col: col_of(var),
                    transform: *transform,
                    design_ix,
                });
            }
            Term::Dummy { var, reference } => {
                let v = schema.variable(var).unwrap();
                let mut slots = Vec::new();
                match v.kind {
                    VariableKind::Categorical => {
                        // Reference level membership was schema-checked in validate().
                        for (ix, level) in v.levels.iter().enumerate() {
                            if level != reference {
                                slots.push((columns.len(), DummyLevel::Cat(ix as u32)));
                                columns.push(FrameColumn {
                                    name: format!("{var}={level}"),
                                    values: Vec::new(),
                                });
                            }
                        }
                    }
                    VariableKind::Year => {
                        let ref_year: i32 = reference.parse().expect("validated");
                        let observed = data.observed_years();
                        if !observed.contains(&ref_year) {
                            return Err(FrameError::ReferenceAbsent {
                                var: var.clone(),
                                reference: reference.clone(),
                            });
                        }
                        for y in observed {
                            if y != ref_year {
                                slots.push((columns.len(), DummyLevel::Year(y)));
                                columns.push(FrameColumn {
                                    name: format!("{var}={y}"),
                                    values: Vec::new(),
                                });
                            }
                        }
                    }
                    _ => unreachable!("validated"),
                }
                plans.push(TermPlan::Dummy(DummyLayout {
                    col: col_of(var),
                    slots,
                }));
            }
        }
    }

    // Variables whose missingness drops a row.
    let used_cols: Vec<usize> = spec.used_variables().iter().map(|v| col_of(v)).collect();

    let filters: Vec<(&Filter, usize)> = spec.filters.iter().map(|f| (f, col_of(&f.var))).collect();

    let mut response = Vec::new();
    let mut cluster = Vec::new();
    let mut years = Vec::new();

    'rows: for &row in rows {
        for (f, col) in &filters {
            if !filter_passes(data, *col, row, f) {
                continue 'rows;
            }
        }
        for &col in &used_cols {
            if data.is_missing(col, row) {
                continue 'rows;
            }
        }
        // Response transform chain.
        let year = data.year_of_row(row);
        let mut y = data.numeric_at(resp_col, row).expect("missing handled");
        for t in &spec.response_transforms {
            match apply_transform(y, *t, year, spec) {
                Ok(v) => y = v,
                Err(e) => {
                    if spec.drop_invalid {
                        continue 'rows;
                    }
                    return Err(domain_error(e, row, &spec.response));
                }
            }
        }
        // Predictor terms.
        let mut numeric_staged: Vec<(usize, f64)> = Vec::with_capacity(plans.len());
        let mut dummy_staged: Vec<(usize, f64)> = Vec::new();
        for plan in &plans {
            match plan {
                TermPlan::Numeric {
                    col,
                    transform,
                    design_ix,
                } => {
                    let mut x = data.numeric_at(*col, row).expect("missing handled above");
                    if let Some(t) = transform {
                        match apply_transform(x, *t, year, spec) {
                            Ok(v) => x = v,
                            Err(e) => {
                                if spec.drop_invalid {
                                    continue 'rows;
                                }
                                return Err(domain_error(e, row, &columns[*design_ix].name));
                            }
                        }
                    }
                    numeric_staged.push((*design_ix, x));
                }
                TermPlan::Dummy(layout) => {
                    let var = &schema.variables()[layout.col];
                    for (design_ix, slot) in &layout.slots {
                        let on = match (slot, var.kind) {
                            (DummyLevel::Cat(level), VariableKind::Categorical) => {
                                data.level_at(layout.col, row) == Some(*level)
                            }
                            (DummyLevel::Year(y), VariableKind::Year) => year == *y,
                            _ => unreachable!(),
                        };
                        dummy_staged.push((*design_ix, if on { 1.0 } else { 0.0 }));
                    }
                }
            }
        }
        // Row accepted: commit.
        response.push(y);
        columns[0].values.push(1.0);
        for (ix, x) in numeric_staged {
            columns[ix].values.push(x);
        }
        for (ix, x) in dummy_staged {
            columns[ix].values.push(x);
        }
        cluster.push(data.entity_of_row(row));
        years.push(year);
    }

    let mut provenance = vec![format!("response {}", spec.response)];
    for t in &spec.response_transforms {
        provenance.push(format!("transform {t:?}"));
    }
    for f in &spec.filters {
        provenance.push(format!("filter {} {:?} {}", f.var, f.op, f.value));
    }
    provenance.push(format!(
        "rows {} of {} after filters and available-case deletion",
        response.len(),
        rows.len()
    ));

    Ok(AnalysisFrame {
        response_name: spec.response.clone(),
        response,
        columns,
        cluster,
        years,
        provenance,
    })
}

enum DomainFailure {
    Log(f64),
    NoIndex(i32),
}

fn domain_error(e: DomainFailure, row: u32, column: &str) -> FrameError {
    match e {
        DomainFailure::Log(v) => FrameError::TransformDomain {
            row,
            column: column.to_string(),
            value: v,
            transform: Transform::Log,
        },
        DomainFailure::NoIndex(y) => FrameError::MissingIndex(y),
    }
}

fn apply_transform(
    x: f64,
    t: Transform,
    year: i32,
    spec: &ModelSpec,
) -> Result<f64, DomainFailure> {
    match t {
        Transform::Log => {
            if x <= 0.0 {
                Err(DomainFailure::Log(x))
            } else {
                Ok(x.ln())
            }
        }
        Transform::Square => Ok(x * x),
        Transform::InflationAdjust => match spec.index_table.get(&year) {
            Some(&ix) => Ok(x / ix),
            None => Err(DomainFailure::NoIndex(year)),
        },
    }
}

fn filter_passes(data: &PanelDataset, col: usize, row: u32, f: &Filter) -> bool {
    let schema_var = &data.schema().variables()[col];
    match schema_var.kind {
        VariableKind::Categorical => {
            let level = match data.level_at(col, row) {
                Some(l) => l,
                None => return false, // missing filter variable excludes the row
            };
            let target = schema_var.level_index(&f.value);
            match f.op {
                FilterOp::Eq => Some(level) == target,
                FilterOp::Ne => target.is_some() && Some(level) != target,
                _ => false,
            }
        }
        VariableKind::EntityId => {
            let label = data.entity_label(data.entity_of_row(row));
            match f.op {
                FilterOp::Eq => label == f.value,
                FilterOp::Ne => label != f.value,
                _ => false,
            }
        }
        VariableKind::Numeric | VariableKind::Year => {
            let x = match data.numeric_at(col, row) {
                Some(x) => x,
                None => return false,
            };
            let v: f64 = f.value.parse().unwrap_or(f64::NAN);
            match f.op {
                FilterOp::Eq => x == v,
                FilterOp::Ne => x != v,
                FilterOp::Lt => x < v,
                FilterOp::Le => x <= v,
                FilterOp::Gt => x > v,
                FilterOp::Ge => x >= v,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{CellValue, PanelBuilder};
    use crate::schema::{Schema, VariableSchema};

    fn demo_data() -> PanelDataset {
        let schema = Schema::new(vec![
            VariableSchema::entity("id"),
            VariableSchema::year("year"),
            VariableSchema::categorical("race", &["white", "black", "asian"]),
            VariableSchema::numeric("pay"),
        ])
        .unwrap();
        let mut b = PanelBuilder::new(schema);
        let rows = [
            ("e1", 1, Some("white"), Some(100.0)),
            ("e1", 2, Some("white"), Some(100.0)),
            ("e2", 1, Some("black"), Some(200.0)),
            ("e2", 2, None, Some(150.0)),
            ("e3", 1, Some("asian"), Some(0.0)),
        ];
        for (id, year, race, pay) in rows {
            let cells = vec![
                race.map(|r| CellValue::Cat(r.into()))
                    .unwrap_or(CellValue::Missing),
                pay.map(CellValue::Num).unwrap_or(CellValue::Missing),
            ];
            b.push_row(id, year, &cells).unwrap();
        }
        b.finish().unwrap()
    }

    #[test]
    fn log_transform_exact() {
        let data = demo_data();
        let spec = ModelSpec::parse("response pay\ntransform log\nfilter pay > 0\n").unwrap();
        let frame = build_frame(&data, &spec).unwrap();
        // missing race row is kept: race is not used by this formula
        assert_eq!(frame.n_rows(), 4);
        assert!((frame.response[0] - 4.6051701859881).abs() < 1e-12);
    }

    #[test]
    fn inflation_then_log_composes() {
        let data = demo_data();
        let spec = ModelSpec::parse(
            "response pay\ntransform inflation_adjust\ntransform log\nindex 1 2.0\nindex 2 1.0\nfilter pay > 0\n",
        )
        .unwrap();
        let frame = build_frame(&data, &spec).unwrap();
        // pay=100 in year 1 with index 2.0 → ln(50)
        assert!((frame.response[0] - 50f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn missing_in_used_variable_drops_row() {
        let data = demo_data();
        let spec =
            ModelSpec::parse("response pay\ndummy race ref=white\nfilter pay > 0\n").unwrap();
        let frame = build_frame(&data, &spec).unwrap();
        // e2 year 2 has missing race; e3 is filtered on pay
        assert_eq!(frame.n_rows(), 3);
        // dummy columns: race=black, race=asian; reference rows all-zero
        let black = frame.column("race=black").unwrap();
        let asian = frame.column("race=asian").unwrap();
        assert_eq!(black.values, vec![0.0, 0.0, 1.0]);
        assert_eq!(asian.values, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn log_of_nonpositive_errors_unless_dropping() {
        let data = demo_data();
        let strict = ModelSpec::parse("response pay\ntransform log\n").unwrap();
        assert!(matches!(
            build_frame(&data, &strict),
            Err(FrameError::TransformDomain { .. })
        ));
        let lenient = ModelSpec::parse("response pay\ntransform log\ndrop_invalid on\n").unwrap();
        let frame = build_frame(&data, &lenient).unwrap();
        assert_eq!(frame.n_rows(), 4); // e3's pay=0 row dropped
    }

    #[test]
    fn dummy_rows_sum_to_at_most_one() {
        let data = demo_data();
        let spec = ModelSpec::parse("response pay\ndummy race ref=white\n").unwrap();
        let frame = build_frame(&data, &spec).unwrap();
        for i in 0..frame.n_rows() {
            let total: f64 = frame
                .columns
                .iter()
                .filter(|c| c.name.starts_with("race="))
                .map(|c| c.values[i])
                .sum();
            assert!(total <= 1.0);
        }
    }

    #[test]
    fn frame_export_readable() {
        let data = demo_data();
        let spec = ModelSpec::parse("response pay\ndummy race ref=white\n").unwrap();
        let frame = build_frame(&data, &spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.csv");
        frame.export_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("pay,(Intercept),race=black,race=asian,__cluster,__year"));
    }
}
