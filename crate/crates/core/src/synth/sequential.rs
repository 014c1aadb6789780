//! Sequential conditional synthesis of whole panels.
//!
//! Careers come first: they decide which years each synthetic entity works
//! and in which agency. Every later variable is drawn from CART conditionals
//! fitted on the confidential data, in plan order, so each conditional sees
//! only already-synthesized values. Longitudinal variables use lag-one
//! conditioning: the year-t draw conditions on current values of earlier
//! variables and the entity's own value at its nearest previous working year.
//! First working years, which have no lag, are drawn from a pooled
//! initial-value tree that conditions on the starting year instead.

use std::collections::{BTreeMap, HashMap};

use rand_chacha::ChaCha8Rng;

use super::career::{
    career_decompose, career_sequences, fit_career_model, sample_careers, CareerModelConfig, Label,
    NOT_WORKING,
};
use super::cart::{
    fit_cart, CartModel, FeatureDef, FeatureKind, FeatureValue, TargetVec, TrainingSet,
};
use super::plan::{Strategy, SynthesisPlan};
use super::SynthError;
use crate::panel::{CellValue, PanelBuilder, PanelDataset};
use crate::schema::{Schema, VariableKind, VariableSchema};

pub fn synthesize_sequential(
    data: &PanelDataset,
    plan: &SynthesisPlan,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PanelDataset, SynthError> {
    plan.validate(data.schema())?;
    let career_var = plan.variables[0].var.clone();
    let career_config = CareerModelConfig {
        alpha: plan.alpha,
        ..CareerModelConfig::default()
    };
    let career_model = fit_career_model(data, &career_var, career_config)?;
    let synth_careers = sample_careers(&career_model, count, rng)?;

    let mut engine = Engine::new(data, plan, career_var.clone(), synth_careers)?;
    for pv in &plan.variables[1..] {
        match pv.strategy {
            Strategy::Career => unreachable!("validated: career only first"),
            Strategy::ConstantDemographic => engine.synth_constant(pv, rng)?,
            Strategy::CartCrossSectional => engine.synth_cross_sectional(pv, rng)?,
            Strategy::CartLagOne => engine.synth_lag_one(pv, rng)?,
            Strategy::ChangeIndicator => engine.synth_change_indicator(pv, rng)?,
        }
    }
    engine.into_panel()
}

struct Engine<'a> {
    data: &'a PanelDataset,
    plan: &'a SynthesisPlan,
    career_var: String,
    t_min: i32,
    n_agencies: u32,
    // training side
    train_careers: Vec<Vec<Label>>,
    /// Per training entity: (year slot, panel row), ascending by slot.
    train_slots: Vec<Vec<(usize, u32)>>,
    // synthetic side
    synth_careers: Vec<Vec<Label>>,
    /// Per synthetic entity: working year slots, ascending.
    synth_slots: Vec<Vec<usize>>,
    /// Synthesized values per plan variable: per entity, aligned with
    /// `synth_slots[e]`.
    synth_values: HashMap<String, Vec<Vec<FeatureValue>>>,
}

impl<'a> Engine<'a> {
    fn new(
        data: &'a PanelDataset,
        plan: &'a SynthesisPlan,
        career_var: String,
        synth_careers: Vec<Vec<Label>>,
    ) -> Result<Self, SynthError> {
        let (t_min, _) = data.year_range();
        let n_agencies = data
            .schema()
            .variable(&career_var)
            .map(|v| v.levels.len() as u32)
            .unwrap_or(0);
        let train_careers = career_sequences(data, &career_var)?;
        let mut train_slots = Vec::with_capacity(data.n_entities());
        for e in 0..data.n_entities() as u32 {
            let mut slots: Vec<(usize, u32)> = data
                .rows_of_entity(e)
                .iter()
                .map(|&r| ((data.year_of_row(r) - t_min) as usize, r))
                .collect();
            slots.sort_unstable();
            train_slots.push(slots);
        }
        let synth_slots = synth_careers
            .iter()
            .map(|seq| {
                seq.iter()
                    .enumerate()
                    .filter(|(_, &l)| l != NOT_WORKING)
                    .map(|(slot, _)| slot)
                    .collect()
            })
            .collect();
        Ok(Engine {
            data,
            plan,
            career_var,
            t_min,
            n_agencies,
            train_careers,
            train_slots,
            synth_careers,
            synth_slots,
            synth_values: HashMap::new(),
        })
    }

    fn schema_var(&self, name: &str) -> &VariableSchema {
        self.data.schema().variable(name).expect("validated")
    }

    fn target_kind(&self, var: &str) -> FeatureKind {
        match self.schema_var(var).kind {
            VariableKind::Categorical => FeatureKind::Cat(self.schema_var(var).levels.len() as u32),
            _ => FeatureKind::Num,
        }
    }

    fn new_target(&self, var: &str) -> TargetBuf {
        match self.target_kind(var) {
            FeatureKind::Cat(n) => TargetBuf::Cat {
                values: Vec::new(),
                n_levels: n,
            },
            FeatureKind::Num => TargetBuf::Num(Vec::new()),
        }
    }

    // ---- feature spaces -------------------------------------------------

    fn row_feature_defs(&self, conditioning: &[String]) -> Vec<FeatureDef> {
        conditioning
            .iter()
            .map(|c| {
                let kind = if *c == self.career_var {
                    FeatureKind::Cat(self.n_agencies + 1)
                } else {
                    self.target_kind(c)
                };
                FeatureDef {
                    name: c.clone(),
                    kind,
                }
            })
            .collect()
    }

    fn entity_feature_defs(&self, conditioning: &[String]) -> Vec<FeatureDef> {
        let mut defs = Vec::new();
        for c in conditioning {
            if *c == self.career_var {
                defs.push(FeatureDef {
                    name: "career.g".into(),
                    kind: FeatureKind::Num,
                });
                defs.push(FeatureDef {
                    name: "career.years_worked".into(),
                    kind: FeatureKind::Num,
                });
                defs.push(FeatureDef {
                    name: "career.first_slot".into(),
                    kind: FeatureKind::Num,
                });
                defs.push(FeatureDef {
                    name: "career.first_agency".into(),
                    kind: FeatureKind::Cat(self.n_agencies + 1),
                });
            } else {
                defs.push(FeatureDef {
                    name: format!("{c}.first"),
                    kind: self.target_kind(c),
                });
            }
        }
        defs
    }

    fn train_cell(&self, var: &str, row: u32) -> Option<FeatureValue> {
        let col = self.data.schema().index_of(var).expect("validated");
        match self.schema_var(var).kind {
            VariableKind::Categorical => self.data.level_at(col, row).map(FeatureValue::Cat),
            _ => self.data.numeric_at(col, row).map(FeatureValue::Num),
        }
    }

    fn train_row_features(
        &self,
        e: usize,
        slot: usize,
        row: u32,
        conditioning: &[String],
    ) -> Option<Vec<FeatureValue>> {
        let mut out = Vec::with_capacity(conditioning.len());
        for c in conditioning {
            if *c == self.career_var {
                out.push(FeatureValue::Cat(self.train_careers[e][slot]));
            } else {
                out.push(self.train_cell(c, row)?);
            }
        }
        Some(out)
    }

    fn train_first_value(&self, var: &str, e: usize) -> Option<FeatureValue> {
        for &(_, row) in &self.train_slots[e] {
            if let Some(v) = self.train_cell(var, row) {
                return Some(v);
            }
        }
        None
    }

    fn train_entity_features(
        &self,
        e: usize,
        conditioning: &[String],
    ) -> Option<Vec<FeatureValue>> {
        let mut out = Vec::new();
        for c in conditioning {
            if *c == self.career_var {
                let triple = career_decompose(&self.train_careers[e]);
                let slots = &self.train_slots[e];
                let first_slot = slots.first()?.0;
                out.push(FeatureValue::Num(triple.g as f64));
                out.push(FeatureValue::Num(slots.len() as f64));
                out.push(FeatureValue::Num(first_slot as f64));
                out.push(FeatureValue::Cat(self.train_careers[e][first_slot]));
            } else {
                out.push(self.train_first_value(c, e)?);
            }
        }
        Some(out)
    }

    fn synth_row_features(
        &self,
        se: usize,
        pos: usize,
        conditioning: &[String],
    ) -> Vec<FeatureValue> {
        let slot = self.synth_slots[se][pos];
        conditioning
            .iter()
            .map(|c| {
                if *c == self.career_var {
                    FeatureValue::Cat(self.synth_careers[se][slot])
                } else {
                    self.synth_values[c][se][pos]
                }
            })
            .collect()
    }

    fn synth_entity_features(&self, se: usize, conditioning: &[String]) -> Vec<FeatureValue> {
        let mut out = Vec::new();
        for c in conditioning {
            if *c == self.career_var {
                let triple = career_decompose(&self.synth_careers[se]);
                let slots = &self.synth_slots[se];
                let first_slot = slots[0];
                out.push(FeatureValue::Num(triple.g as f64));
                out.push(FeatureValue::Num(slots.len() as f64));
                out.push(FeatureValue::Num(first_slot as f64));
                out.push(FeatureValue::Cat(self.synth_careers[se][first_slot]));
            } else {
                out.push(self.synth_values[c][se][0]);
            }
        }
        out
    }

    // ---- strategies ------------------------------------------------------

    fn synth_constant(
        &mut self,
        pv: &super::plan::PlanVariable,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), SynthError> {
        let model = self.fit_entity_tree(&pv.var, &pv.conditioning)?;
        let mut values = Vec::with_capacity(self.synth_slots.len());
        for se in 0..self.synth_slots.len() {
            if self.synth_slots[se].is_empty() {
                values.push(Vec::new());
                continue;
            }
            let feats = self.synth_entity_features(se, &pv.conditioning);
            let v = model.sample(&feats, rng);
            values.push(vec![v; self.synth_slots[se].len()]);
        }
        self.synth_values.insert(pv.var.clone(), values);
        Ok(())
    }

    /// Entity-level tree: target = first observed value of `var`.
    fn fit_entity_tree(&self, var: &str, conditioning: &[String]) -> Result<CartModel, SynthError> {
        let defs = self.entity_feature_defs(conditioning);
        let mut rows = Vec::new();
        let mut target = self.new_target(var);
        for e in 0..self.train_slots.len() {
            if self.train_slots[e].is_empty() {
                continue;
            }
            let (Some(feats), Some(tv)) = (
                self.train_entity_features(e, conditioning),
                self.train_first_value(var, e),
            ) else {
                continue;
            };
            rows.push(feats);
            target.push(tv);
        }
        if rows.is_empty() {
            return Err(SynthError::NoData(var.to_string()));
        }
        fit_cart(
            &TrainingSet {
                features: defs,
                rows,
                target: target.finish(),
            },
            self.plan.min_leaf,
        )
    }

    fn synth_cross_sectional(
        &mut self,
        pv: &super::plan::PlanVariable,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), SynthError> {
        let row_defs = self.row_feature_defs(&pv.conditioning);

        // Per-slot trees.
        let mut per_slot: BTreeMap<usize, (Vec<Vec<FeatureValue>>, TargetBuf)> = BTreeMap::new();
        // Pooled fallback with the year slot as an extra feature.
        let mut pooled_rows = Vec::new();
        let mut pooled_target = self.new_target(&pv.var);
        for e in 0..self.train_slots.len() {
            for &(slot, row) in &self.train_slots[e] {
                let (Some(feats), Some(tv)) = (
                    self.train_row_features(e, slot, row, &pv.conditioning),
                    self.train_cell(&pv.var, row),
                ) else {
                    continue;
                };
                let entry = per_slot
                    .entry(slot)
                    .or_insert_with(|| (Vec::new(), self.new_target(&pv.var)));
                entry.0.push(feats.clone());
                entry.1.push(tv);
                let mut pooled = feats;
                pooled.push(FeatureValue::Num(slot as f64));
                pooled_rows.push(pooled);
                pooled_target.push(tv);
            }
        }
        if pooled_rows.is_empty() {
            return Err(SynthError::NoData(pv.var.clone()));
        }
        let slot_trees: BTreeMap<usize, CartModel> = per_slot
            .into_iter()
            .map(|(slot, (rows, target))| {
                fit_cart(
                    &TrainingSet {
                        features: row_defs.clone(),
                        rows,
                        target: target.finish(),
                    },
                    self.plan.min_leaf,
                )
                .map(|m| (slot, m))
            })
            .collect::<Result<_, _>>()?;
        let mut pooled_defs = row_defs.clone();
        pooled_defs.push(FeatureDef {
            name: "__slot".into(),
            kind: FeatureKind::Num,
        });
        let pooled_tree = fit_cart(
            &TrainingSet {
                features: pooled_defs,
                rows: pooled_rows,
                target: pooled_target.finish(),
            },
            self.plan.min_leaf,
        )?;

        let mut values = Vec::with_capacity(self.synth_slots.len());
        for se in 0..self.synth_slots.len() {
            let mut per_entity = Vec::with_capacity(self.synth_slots[se].len());
            for pos in 0..self.synth_slots[se].len() {
                let slot = self.synth_slots[se][pos];
                let feats = self.synth_row_features(se, pos, &pv.conditioning);
                let v = match slot_trees.get(&slot) {
                    Some(tree) => tree.sample(&feats, rng),
                    None => {
                        let mut f = feats;
                        f.push(FeatureValue::Num(slot as f64));
                        pooled_tree.sample(&f, rng)
                    }
                };
                per_entity.push(v);
            }
            values.push(per_entity);
        }
        self.synth_values.insert(pv.var.clone(), values);
        Ok(())
    }

    fn synth_lag_one(
        &mut self,
        pv: &super::plan::PlanVariable,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), SynthError> {
        let path = self.fit_lag_path(&pv.var, &pv.conditioning, None)?;
        let mut values = Vec::with_capacity(self.synth_slots.len());
        for se in 0..self.synth_slots.len() {
            values.push(self.sample_lag_path(&path, se, &pv.conditioning, rng));
        }
        self.synth_values.insert(pv.var.clone(), values);
        Ok(())
    }

    fn synth_change_indicator(
        &mut self,
        pv: &super::plan::PlanVariable,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), SynthError> {
        // Auxiliary binary: does the entity's value change across its years?
        let entity_defs = self.entity_feature_defs(&pv.conditioning);
        let mut flag_rows = Vec::new();
        let mut flag_target = Vec::new();
        let mut changers = Vec::new();
        for e in 0..self.train_slots.len() {
            if self.train_slots[e].is_empty() {
                continue;
            }
            let Some(feats) = self.train_entity_features(e, &pv.conditioning) else {
                continue;
            };
            let vals: Vec<FeatureValue> = self.train_slots[e]
                .iter()
                .filter_map(|&(_, row)| self.train_cell(&pv.var, row))
                .collect();
            if vals.is_empty() {
                continue;
            }
            let changed = vals.iter().any(|v| *v != vals[0]);
            flag_rows.push(feats);
            flag_target.push(changed as u32);
            if changed {
                changers.push(e);
            }
        }
        if flag_rows.is_empty() {
            return Err(SynthError::NoData(pv.var.clone()));
        }
        let flag_tree = fit_cart(
            &TrainingSet {
                features: entity_defs,
                rows: flag_rows,
                target: TargetVec::Cat {
                    values: flag_target,
                    n_levels: 2,
                },
            },
            self.plan.min_leaf,
        )?;
        let const_tree = self.fit_entity_tree(&pv.var, &pv.conditioning)?;
        // Year-by-year dynamics fitted on changers only, so synthetic
        // changers switch at realistic rates.
        let changer_path = if changers.is_empty() {
            None
        } else {
            Some(self.fit_lag_path(&pv.var, &pv.conditioning, Some(&changers))?)
        };

        let mut values = Vec::with_capacity(self.synth_slots.len());
        for se in 0..self.synth_slots.len() {
            if self.synth_slots[se].is_empty() {
                values.push(Vec::new());
                continue;
            }
            let feats = self.synth_entity_features(se, &pv.conditioning);
            let changed = matches!(flag_tree.sample(&feats, rng), FeatureValue::Cat(1));
            match (&changer_path, changed) {
                (Some(path), true) => {
                    values.push(self.sample_lag_path(path, se, &pv.conditioning, rng));
                }
                _ => {
                    let v = const_tree.sample(&feats, rng);
                    values.push(vec![v; self.synth_slots[se].len()]);
                }
            }
        }
        self.synth_values.insert(pv.var.clone(), values);
        Ok(())
    }

    /// Initial-value tree plus per-slot lag trees plus pooled fallback.
    fn fit_lag_path(
        &self,
        var: &str,
        conditioning: &[String],
        entity_subset: Option<&[usize]>,
    ) -> Result<LagPath, SynthError> {
        let row_defs = self.row_feature_defs(conditioning);
        let lag_def = FeatureDef {
            name: format!("{var}.lag"),
            kind: self.target_kind(var),
        };

        let mut initial_defs = row_defs.clone();
        initial_defs.push(FeatureDef {
            name: "__first_slot".into(),
            kind: FeatureKind::Num,
        });
        let mut initial_rows = Vec::new();
        let mut initial_target = self.new_target(var);

        let mut slot_defs = row_defs.clone();
        slot_defs.push(lag_def.clone());
        let mut per_slot: BTreeMap<usize, (Vec<Vec<FeatureValue>>, TargetBuf)> = BTreeMap::new();

        let mut pooled_defs = row_defs.clone();
        pooled_defs.push(FeatureDef {
            name: "__slot".into(),
            kind: FeatureKind::Num,
        });
        pooled_defs.push(lag_def);
        let mut pooled_rows = Vec::new();
        let mut pooled_target = self.new_target(var);

        let entities: Vec<usize> = match entity_subset {
            Some(subset) => subset.to_vec(),
            None => (0..self.train_slots.len()).collect(),
        };
        for e in entities {
            let slots = &self.train_slots[e];
            if slots.is_empty() {
                continue;
            }
            // first observed year
            let (first_slot, first_row) = slots[0];
            if let (Some(feats), Some(tv)) = (
                self.train_row_features(e, first_slot, first_row, conditioning),
                self.train_cell(var, first_row),
            ) {
                let mut f = feats;
                f.push(FeatureValue::Num(first_slot as f64));
                initial_rows.push(f);
                initial_target.push(tv);
            }
            // subsequent years with an observed lag
            for w in slots.windows(2) {
                let (prev_slot, prev_row) = w[0];
                let (slot, row) = w[1];
                let _ = prev_slot;
                let (Some(feats), Some(lag), Some(tv)) = (
                    self.train_row_features(e, slot, row, conditioning),
                    self.train_cell(var, prev_row),
                    self.train_cell(var, row),
                ) else {
                    continue;
                };
                let mut f = feats.clone();
                f.push(lag);
                let entry = per_slot
                    .entry(slot)
                    .or_insert_with(|| (Vec::new(), self.new_target(var)));
                entry.0.push(f);
                entry.1.push(tv);
                let mut p = feats;
                p.push(FeatureValue::Num(slot as f64));
                p.push(lag);
                pooled_rows.push(p);
                pooled_target.push(tv);
            }
        }
        if initial_rows.is_empty() {
            return Err(SynthError::NoData(var.to_string()));
        }
        let initial = fit_cart(
            &TrainingSet {
                features: initial_defs,
                rows: initial_rows,
                target: initial_target.finish(),
            },
            self.plan.min_leaf,
        )?;
        let slot_trees: BTreeMap<usize, CartModel> = per_slot
            .into_iter()
            .map(|(slot, (rows, target))| {
                fit_cart(
                    &TrainingSet {
                        features: slot_defs.clone(),
                        rows,
                        target: target.finish(),
                    },
                    self.plan.min_leaf,
                )
                .map(|m| (slot, m))
            })
            .collect::<Result<_, _>>()?;
        let pooled = if pooled_rows.is_empty() {
            None
        } else {
            Some(fit_cart(
                &TrainingSet {
                    features: pooled_defs,
                    rows: pooled_rows,
                    target: pooled_target.finish(),
                },
                self.plan.min_leaf,
            )?)
        };
        Ok(LagPath {
            initial,
            slot_trees,
            pooled,
        })
    }

    fn sample_lag_path(
        &self,
        path: &LagPath,
        se: usize,
        conditioning: &[String],
        rng: &mut ChaCha8Rng,
    ) -> Vec<FeatureValue> {
        let slots = &self.synth_slots[se];
        let mut out: Vec<FeatureValue> = Vec::with_capacity(slots.len());
        for pos in 0..slots.len() {
            let slot = slots[pos];
            let feats = self.synth_row_features(se, pos, conditioning);
            let v = if pos == 0 {
                let mut f = feats;
                f.push(FeatureValue::Num(slot as f64));
                path.initial.sample(&f, rng)
            } else {
                let lag = out[pos - 1];
                match path.slot_trees.get(&slot) {
                    Some(tree) => {
                        let mut f = feats;
                        f.push(lag);
                        tree.sample(&f, rng)
                    }
                    None => match &path.pooled {
                        Some(tree) => {
                            let mut f = feats;
                            f.push(FeatureValue::Num(slot as f64));
                            f.push(lag);
                            tree.sample(&f, rng)
                        }
                        None => {
                            let mut f = feats;
                            f.push(FeatureValue::Num(slot as f64));
                            path.initial.sample(&f, rng)
                        }
                    },
                }
            };
            out.push(v);
        }
        out
    }

    // ---- assembly --------------------------------------------------------

    fn into_panel(self) -> Result<PanelDataset, SynthError> {
        let src = self.data.schema();
        let mut vars: Vec<VariableSchema> = vec![
            src.variables()[src.entity_col()].clone(),
            src.variables()[src.year_col()].clone(),
        ];
        for pv in &self.plan.variables {
            vars.push(self.schema_var(&pv.var).clone());
        }
        let out_schema = Schema::new(vars).expect("source schema was valid");
        let mut builder = PanelBuilder::new(out_schema);
        let width = self.synth_slots.len().to_string().len().max(4);
        for se in 0..self.synth_slots.len() {
            for (pos, &slot) in self.synth_slots[se].iter().enumerate() {
                let year = self.t_min + slot as i32;
                let mut cells = Vec::with_capacity(self.plan.variables.len());
                for pv in &self.plan.variables {
                    let schema_var = self.schema_var(&pv.var);
                    let cell = if pv.var == self.career_var {
                        let label = self.synth_careers[se][slot];
                        CellValue::Cat(schema_var.levels[label as usize - 1].clone())
                    } else {
                        match self.synth_values[&pv.var][se][pos] {
                            FeatureValue::Num(x) => CellValue::Num(x),
                            FeatureValue::Cat(level) => {
                                CellValue::Cat(schema_var.levels[level as usize].clone())
                            }
                        }
                    };
                    cells.push(cell);
                }
                builder.push_row(&format!("s{:0width$}", se + 1), year, &cells)?;
            }
        }
        Ok(builder.finish()?)
    }
}

struct LagPath {
    initial: CartModel,
    slot_trees: BTreeMap<usize, CartModel>,
    pooled: Option<CartModel>,
}

enum TargetBuf {
    Num(Vec<f64>),
    Cat { values: Vec<u32>, n_levels: u32 },
}

impl TargetBuf {
    fn push(&mut self, v: FeatureValue) {
        match (self, v) {
            (TargetBuf::Num(xs), FeatureValue::Num(x)) => xs.push(x),
            (TargetBuf::Cat { values, .. }, FeatureValue::Cat(c)) => values.push(c),
            _ => panic!("target kind mismatch"),
        }
    }

    fn finish(self) -> TargetVec {
        match self {
            TargetBuf::Num(xs) => TargetVec::Num(xs),
            TargetBuf::Cat { values, n_levels } => TargetVec::Cat { values, n_levels },
        }
    }
}
