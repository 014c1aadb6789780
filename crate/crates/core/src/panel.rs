//! Immutable panel data store.
//!
//! A [`PanelDataset`] holds one row per (entity, year) observation in columnar
//! form. It is validated on construction and never mutated afterwards, so it
//! can be shared freely across threads. The canonical ingest format is a long
//! CSV with a header matching the schema's variable names.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use thiserror::Error;

use crate::schema::{Schema, VariableKind, VariableSchema};

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("header does not match schema: expected `{expected}`, found `{found}`")]
    HeaderMismatch { expected: String, found: String },
    #[error("duplicate (entity, year) key: ({entity}, {year})")]
    DuplicateKey { entity: String, year: i32 },
    #[error("row {row}, column `{column}`: value `{value}` violates kind {kind:?}")]
    TypeViolation {
        row: usize,
        column: String,
        value: String,
        kind: VariableKind,
    },
    #[error("row {row}, column `{column}`: unknown category level `{level}`")]
    LevelViolation {
        row: usize,
        column: String,
        level: String,
    },
    #[error("entity id or year may not be missing (row {0})")]
    MissingKey(usize),
    #[error("dataset has no rows")]
    Empty,
}

/// One cell in builder/iteration form.
#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    Missing,
    Num(f64),
    Cat(String),
}

#[derive(Debug, Clone)]
pub(crate) enum ColumnData {
    /// Interned entity index per row.
    Entity(Vec<u32>),
    Year(Vec<i32>),
    /// Level index per row, `None` when missing.
    Categorical(Vec<Option<u32>>),
    Numeric(Vec<Option<f64>>),
}

/// Immutable entity×year table of typed cells.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    schema: Schema,
    columns: Vec<ColumnData>,
    entities: Vec<String>,
    entity_rows: Vec<Vec<u32>>,
    year_range: (i32, i32),
    n_rows: usize,
}

/// Accumulates rows, then validates into a [`PanelDataset`].
pub struct PanelBuilder {
    schema: Schema,
    columns: Vec<ColumnData>,
    entities: Vec<String>,
    entity_ids: HashMap<String, u32>,
    entity_rows: Vec<Vec<u32>>,
    // Key-uniqueness tracking: while input arrives in ascending (entity, year)
    // order a single comparison suffices; the hash set is built lazily on the
    // first out-of-order row.
    seen_keys: HashSet<(u32, i32)>,
    hashed: bool,
    last_key: Option<(u32, i32)>,
    n_rows: usize,
}

impl PanelBuilder {
    pub fn new(schema: Schema) -> Self {
        let columns = schema
            .variables()
            .iter()
            .map(|v| match v.kind {
                VariableKind::EntityId => ColumnData::Entity(Vec::new()),
                VariableKind::Year => ColumnData::Year(Vec::new()),
                VariableKind::Categorical => ColumnData::Categorical(Vec::new()),
                VariableKind::Numeric => ColumnData::Numeric(Vec::new()),
            })
            .collect();
        PanelBuilder {
            schema,
            columns,
            entities: Vec::new(),
            entity_ids: HashMap::new(),
            entity_rows: Vec::new(),
            seen_keys: HashSet::new(),
            hashed: false,
            last_key: None,
            n_rows: 0,
        }
    }

    fn check_key(&mut self, key: (u32, i32)) -> bool {
        if !self.hashed {
            match self.last_key {
                None => {
                    self.last_key = Some(key);
                    return true;
                }
                Some(last) if key > last => {
                    self.last_key = Some(key);
                    return true;
                }
                Some(last) if key == last => return false,
                Some(_) => {
                    // out-of-order input: switch to hashed tracking
                    self.hashed = true;
                    self.seen_keys.reserve(self.n_rows + 1);
                    let years = match &self.columns[self.schema.year_col()] {
                        ColumnData::Year(v) => v.clone(),
                        _ => unreachable!(),
                    };
                    for (e, rows) in self.entity_rows.iter().enumerate() {
                        for &r in rows {
                            self.seen_keys.insert((e as u32, years[r as usize]));
                        }
                    }
                }
            }
        }
        self.seen_keys.insert(key)
    }

    fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.entity_ids.get(label) {
            return id;
        }
        let id = self.entities.len() as u32;
        self.entities.push(label.to_string());
        self.entity_ids.insert(label.to_string(), id);
        self.entity_rows.push(Vec::new());
        id
    }

    /// Append one observation. `cells` must align with the schema's
    /// non-key variables in declaration order.
    pub fn push_row(
        &mut self,
        entity: &str,
        year: i32,
        cells: &[CellValue],
    ) -> Result<(), PanelError> {
        let eid = self.intern(entity);
        if !self.check_key((eid, year)) {
            return Err(PanelError::DuplicateKey {
                entity: entity.to_string(),
                year,
            });
        }
        let row = self.n_rows;
        let mut cell_iter = cells.iter();
        for (ci, var) in self.schema.variables().iter().enumerate() {
            match (&mut self.columns[ci], var.kind) {
                (ColumnData::Entity(v), _) => v.push(eid),
                (ColumnData::Year(v), _) => v.push(year),
                (ColumnData::Categorical(v), _) => {
                    let cell = cell_iter.next().unwrap_or(&CellValue::Missing);
                    match cell {
                        CellValue::Missing => v.push(None),
                        CellValue::Cat(label) => match var.level_index(label) {
                            Some(ix) => v.push(Some(ix)),
                            None => {
                                return Err(PanelError::LevelViolation {
                                    row,
                                    column: var.name.clone(),
                                    level: label.clone(),
                                })
                            }
                        },
                        CellValue::Num(x) => {
                            return Err(PanelError::TypeViolation {
                                row,
                                column: var.name.clone(),
                                value: x.to_string(),
                                kind: VariableKind::Categorical,
                            })
                        }
                    }
                }
                (ColumnData::Numeric(v), _) => {
                    let cell = cell_iter.next().unwrap_or(&CellValue::Missing);
                    match cell {
                        CellValue::Missing => v.push(None),
                        CellValue::Num(x) => v.push(Some(*x)),
                        CellValue::Cat(s) => {
                            return Err(PanelError::TypeViolation {
                                row,
                                column: var.name.clone(),
                                value: s.clone(),
                                kind: VariableKind::Numeric,
                            })
                        }
                    }
                }
            }
        }
        self.entity_rows[eid as usize].push(row as u32);
        self.n_rows += 1;
        Ok(())
    }

    pub fn finish(self) -> Result<PanelDataset, PanelError> {
        if self.n_rows == 0 {
            return Err(PanelError::Empty);
        }
        let years = match &self.columns[self.schema.year_col()] {
            ColumnData::Year(v) => v,
            _ => unreachable!(),
        };
        let (mut lo, mut hi) = (i32::MAX, i32::MIN);
        for &y in years {
            lo = lo.min(y);
            hi = hi.max(y);
        }
        Ok(PanelDataset {
            schema: self.schema,
            columns: self.columns,
            entities: self.entities,
            entity_rows: self.entity_rows,
            year_range: (lo, hi),
            n_rows: self.n_rows,
        })
    }
}

impl PanelDataset {
    /// Load and validate a long-format CSV against `schema`.
    pub fn load_csv(path: &Path, schema: Schema) -> Result<PanelDataset, PanelError> {
        let mut reader = csv::ReaderBuilder::new().from_path(path)?;
        let header: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
        let expected: Vec<String> = schema.variables().iter().map(|v| v.name.clone()).collect();
        if header != expected {
            return Err(PanelError::HeaderMismatch {
                expected: expected.join(","),
                found: header.join(","),
            });
        }
        let vars: Vec<VariableSchema> = schema.variables().to_vec();
        let entity_col = schema.entity_col();
        let year_col = schema.year_col();
        let mut builder = PanelBuilder::new(schema);
        for (rowno, record) in reader.records().enumerate() {
            let record = record?;
            let entity = record.get(entity_col).unwrap_or("");
            if entity.is_empty() || entity == vars[entity_col].missing_token {
                return Err(PanelError::MissingKey(rowno));
            }
            let year_raw = record.get(year_col).unwrap_or("");
            let year: i32 = year_raw.parse().map_err(|_| PanelError::TypeViolation {
                row: rowno,
                column: vars[year_col].name.clone(),
                value: year_raw.to_string(),
                kind: VariableKind::Year,
            })?;
            let mut cells = Vec::with_capacity(vars.len() - 2);
            for (ci, var) in vars.iter().enumerate() {
                match var.kind {
                    VariableKind::EntityId | VariableKind::Year => continue,
                    VariableKind::Categorical => {
                        let raw = record.get(ci).unwrap_or("");
                        if raw == var.missing_token {
                            cells.push(CellValue::Missing);
                        } else {
                            cells.push(CellValue::Cat(raw.to_string()));
                        }
                    }
                    VariableKind::Numeric => {
                        let raw = record.get(ci).unwrap_or("");
                        if raw == var.missing_token {
                            cells.push(CellValue::Missing);
                        } else {
                            let x: f64 = raw.parse().map_err(|_| PanelError::TypeViolation {
                                row: rowno,
                                column: var.name.clone(),
                                value: raw.to_string(),
                                kind: VariableKind::Numeric,
                            })?;
                            cells.push(CellValue::Num(x));
                        }
                    }
                }
            }
            builder.push_row(entity, year, &cells)?;
        }
        builder.finish()
    }

    /// Write back out in the ingest format. Reloading yields cell-identical data.
    pub fn export_csv(&self, path: &Path) -> Result<(), PanelError> {
        let mut writer = csv::Writer::from_path(path)?;
        let names: Vec<&str> = self
            .schema
            .variables()
            .iter()
            .map(|v| v.name.as_str())
            .collect();
        writer.write_record(&names)?;
        for row in 0..self.n_rows {
            let mut record: Vec<String> = Vec::with_capacity(names.len());
            for (ci, var) in self.schema.variables().iter().enumerate() {
                let text = match &self.columns[ci] {
                    ColumnData::Entity(v) => self.entities[v[row] as usize].clone(),
                    ColumnData::Year(v) => v[row].to_string(),
                    ColumnData::Categorical(v) => match v[row] {
                        Some(ix) => var.levels[ix as usize].clone(),
                        None => var.missing_token.clone(),
                    },
                    ColumnData::Numeric(v) => match v[row] {
                        Some(x) => format_num(x),
                        None => var.missing_token.clone(),
                    },
                };
                record.push(text);
            }
            writer.write_record(&record)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn year_range(&self) -> (i32, i32) {
        self.year_range
    }

    pub fn entity_label(&self, id: u32) -> &str {
        &self.entities[id as usize]
    }

    pub fn entity_id(&self, label: &str) -> Option<u32> {
        self.entities
            .iter()
            .position(|e| e == label)
            .map(|i| i as u32)
    }

    /// Row indices belonging to one entity, in insertion order.
    pub fn rows_of_entity(&self, id: u32) -> &[u32] {
        &self.entity_rows[id as usize]
    }

    pub fn entity_of_row(&self, row: u32) -> u32 {
        match &self.columns[self.schema.entity_col()] {
            ColumnData::Entity(v) => v[row as usize],
            _ => unreachable!(),
        }
    }

    pub fn year_of_row(&self, row: u32) -> i32 {
        match &self.columns[self.schema.year_col()] {
            ColumnData::Year(v) => v[row as usize],
            _ => unreachable!(),
        }
    }

    /// Numeric cell accessor; `None` when missing or not a numeric column.
    pub fn numeric_at(&self, col: usize, row: u32) -> Option<f64> {
        match &self.columns[col] {
            ColumnData::Numeric(v) => v[row as usize],
            ColumnData::Year(v) => Some(v[row as usize] as f64),
            _ => None,
        }
    }

    /// Categorical level index; `None` when missing or not categorical.
    pub fn level_at(&self, col: usize, row: u32) -> Option<u32> {
        match &self.columns[col] {
            ColumnData::Categorical(v) => v[row as usize],
            _ => None,
        }
    }

    /// Whether the cell at (col, row) is missing.
    pub fn is_missing(&self, col: usize, row: u32) -> bool {
        match &self.columns[col] {
            ColumnData::Categorical(v) => v[row as usize].is_none(),
            ColumnData::Numeric(v) => v[row as usize].is_none(),
            _ => false,
        }
    }

    /// Distinct years observed anywhere in the dataset, ascending.
    pub fn observed_years(&self) -> Vec<i32> {
        let years = match &self.columns[self.schema.year_col()] {
            ColumnData::Year(v) => v,
            _ => unreachable!(),
        };
        let mut set: Vec<i32> = years
            .iter()
            .copied()
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        set.sort_unstable();
        set
    }

    /// Cell in builder form, for re-building modified copies.
    pub fn cell(&self, col: usize, row: u32) -> CellValue {
        let var = &self.schema.variables()[col];
        match &self.columns[col] {
            ColumnData::Entity(v) => {
                CellValue::Cat(self.entities[v[row as usize] as usize].clone())
            }
            ColumnData::Year(v) => CellValue::Num(v[row as usize] as f64),
            ColumnData::Categorical(v) => match v[row as usize] {
                Some(ix) => CellValue::Cat(var.levels[ix as usize].clone()),
                None => CellValue::Missing,
            },
            ColumnData::Numeric(v) => match v[row as usize] {
                Some(x) => CellValue::Num(x),
                None => CellValue::Missing,
            },
        }
    }

    /// Non-key cells of a row in schema order, for `PanelBuilder::push_row`.
    pub fn row_cells(&self, row: u32) -> Vec<CellValue> {
        let mut cells = Vec::new();
        for (ci, var) in self.schema.variables().iter().enumerate() {
            match var.kind {
                VariableKind::EntityId | VariableKind::Year => continue,
                _ => cells.push(self.cell(ci, row)),
            }
        }
        cells
    }
}

fn format_num(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        // Round-trippable formatting.
        let mut s = format!("{}", x);
        if s.parse::<f64>() != Ok(x) {
            s = format!("{:?}", x);
        }
        s
    }
}
